//! Monte Carlo designs with scarcity near the frontier, panel generation and
//! experiment orchestration.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::skewness_lower_bound;
use crate::dist::{DeviationParams, ScaledBetaParams};
use crate::error::{Error, Result};
use crate::fit::{fit_deviation_distribution, FitConfig, FitTarget};
use crate::moments::{pooled_moments, PooledMoments};
use crate::panel::{FirmBlock, Observation, PanelDataset};
use crate::residualize::decompose_grand_mean;

/// How the standard deviation of the random error is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaVRule {
    /// Standard deviation of the drawn deviations, recomputed per replication.
    MatchUSd,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDesign {
    /// Frontier constant.
    pub g: f64,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub n: usize,
    pub t: usize,
    /// Quantile level below which candidates are thinned.
    pub f: f64,
    /// Probability of discarding a candidate below the f-quantile.
    pub p: f64,
    pub sigma_v: SigmaVRule,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            g: 5.0,
            a: 2.0,
            b: 2.0,
            q: 4.0,
            n: 250,
            t: 8,
            f: 0.05,
            p: 0.95,
            sigma_v: SigmaVRule::MatchUSd,
            reps: 50,
            seed: 0,
        }
    }
}

impl SimDesign {
    pub fn with_shape(&self, a: f64, b: f64) -> Self {
        SimDesign { a, b, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.a) && pos(self.b) && pos(self.q)) {
            return Err(Error::domain(format!("shape and scale must be positive: a={}, b={}, q={}", self.a, self.b, self.q)));
        }
        if !self.g.is_finite() {
            return Err(Error::domain("frontier constant g must be finite"));
        }
        if self.n == 0 || self.t == 0 || self.reps == 0 {
            return Err(Error::domain("n, T and reps must be at least 1"));
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(Error::domain(format!("f must lie in (0, 1), got {}", self.f)));
        }
        if !(self.p >= 0.0 && self.p < 1.0) {
            return Err(Error::domain(format!("p must lie in [0, 1), got {}", self.p)));
        }
        if self.f * self.p >= 1.0 {
            return Err(Error::domain("f·p must be below one"));
        }
        if let SigmaVRule::Fixed(s) = self.sigma_v {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("fixed sigma_v must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    pub fn region(&self) -> RegionLabel {
        RegionLabel::classify(self.a, self.b)
    }

    /// q times the Beta(a, b) f-quantile.
    pub fn threshold(&self) -> Result<f64> {
        DeviationParams::ScaledBeta(ScaledBetaParams { a: self.a, b: self.b, q: self.q }).quantile(self.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    #[serde(rename = "High-NFM")]
    HighNfm,
    #[serde(rename = "Uni-R")]
    UniR,
    #[serde(rename = "Uni-L")]
    UniL,
    #[serde(rename = "Low-NFM")]
    LowNfm,
}

impl RegionLabel {
    pub fn classify(a: f64, b: f64) -> Self {
        if a < 1.0 {
            RegionLabel::HighNfm
        } else if b < 1.0 {
            RegionLabel::LowNfm
        } else if a <= b {
            RegionLabel::UniR
        } else {
            RegionLabel::UniL
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionLabel::HighNfm => "High-NFM",
            RegionLabel::UniR => "Uni-R",
            RegionLabel::UniL => "Uni-L",
            RegionLabel::LowNfm => "Low-NFM",
        }
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One representative shape per region.
pub fn representative_designs(base: &SimDesign) -> Vec<SimDesign> {
    [(0.5, 2.0), (2.0, 4.0), (4.0, 2.0), (2.0, 0.5)]
        .iter()
        .map(|&(a, b)| base.with_shape(a, b))
        .collect()
}

/// Equally spaced `k × k` lattice in (log a, log b) over `[lo, hi]²`.
pub fn grid_designs(base: &SimDesign, k: usize, lo: f64, hi: f64) -> Vec<SimDesign> {
    let step = if k > 1 { (hi - lo) / (k - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(base.with_shape((lo + step * i as f64).exp(), (lo + step * j as f64).exp()));
        }
    }
    out
}

/// Stream-separated generator for (grid point, replication).
pub fn replication_rng(seed: u64, grid_idx: usize, rep: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((grid_idx as u64) << 32) | rep as u64);
    rng
}

struct Sampler {
    beta: Beta<f64>,
    q: f64,
    threshold: f64,
    p: f64,
}

impl Sampler {
    fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        Ok(Sampler {
            beta: Beta::new(design.a, design.b).map_err(|e| Error::domain(e.to_string()))?,
            q: design.q,
            threshold: design.threshold()?,
            p: design.p,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u = self.q * self.beta.sample(rng);
            if u >= self.threshold || self.p == 0.0 || rng.random::<f64>() >= self.p {
                return u;
            }
        }
    }
}

/// Draws `design.n` deviations by thinning q·Beta(a, b) below its
/// f-quantile.
pub fn draw_deviations<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Vec<f64>> {
    let s = Sampler::new(design)?;
    Ok((0..design.n).map(|_| s.draw(rng)).collect())
}

/// Mean, central moments (μ2, μ3, μ4) and skewness bound of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub mean: f64,
    pub moments: [f64; 3],
    pub lb: f64,
    pub draws: usize,
}

impl SampleTruth {
    pub fn from_sample(u: &[f64]) -> Result<Self> {
        if u.len() < 2 {
            return Err(Error::domain("need at least two draws"));
        }
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let mut m = [0.0; 3];
        for &x in u {
            let d = x - mean;
            let d2 = d * d;
            m[0] += d2;
            m[1] += d2 * d;
            m[2] += d2 * d2;
        }
        for v in &mut m {
            *v /= n;
        }
        let lb = if m[0] > 0.0 { skewness_lower_bound(m[0], m[1])? } else { 0.0 };
        Ok(SampleTruth { mean, moments: m, lb, draws: u.len() })
    }
}

pub const REFERENCE_DRAWS: usize = 1_000_000;

/// Population quantities of the thinned distribution from a large sample
/// on the reserved stream of grid point `grid_idx`.
pub fn reference_truth(design: &SimDesign, grid_idx: usize, draws: usize) -> Result<SampleTruth> {
    let s = Sampler::new(design)?;
    let mut rng = replication_rng(design.seed, grid_idx, u32::MAX);
    let u: Vec<f64> = (0..draws).map(|_| s.draw(&mut rng)).collect();
    SampleTruth::from_sample(&u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPanel {
    pub data: PanelDataset,
    pub u: Vec<f64>,
    pub sigma_v: f64,
    /// Moments of the realized deviations.
    pub realized: SampleTruth,
}

/// y_it = g − u_i + v_it with v_it ~ N(0, σ_v²) and a constant input.
pub fn generate_panel<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<SimPanel> {
    let u = draw_deviations(design, rng)?;
    let realized = if u.len() >= 2 {
        SampleTruth::from_sample(&u)?
    } else {
        SampleTruth { mean: u[0], moments: [0.0; 3], lb: 0.0, draws: 1 }
    };
    let sigma_v = match design.sigma_v {
        SigmaVRule::MatchUSd => realized.moments[0].sqrt(),
        SigmaVRule::Fixed(s) => s,
    };
    let noise = Normal::new(0.0, sigma_v).map_err(|e| Error::domain(e.to_string()))?;
    let firms = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| FirmBlock {
            firm_id: (i + 1).to_string(),
            periods: (1..=design.t)
                .map(|t| Observation { period: t.to_string(), x: vec![0.0], y: design.g - ui + noise.sample(rng) })
                .collect(),
        })
        .collect();
    Ok(SimPanel { data: PanelDataset::new(firms, 1)?, u, sigma_v, realized })
}

/// Named estimator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub label: String,
    pub fit: FitConfig,
}

impl EstimatorSpec {
    pub fn new(fit: FitConfig) -> Self {
        let label = match fit.c.width() {
            None => "unconstrained".to_string(),
            Some(c) => format!("m0={},c={}", fit.m0, c),
        };
        EstimatorSpec { label, fit }
    }
}

/// Per-replication estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub grid_idx: usize,
    pub rep: u32,
    pub pooled: Option<PooledMoments>,
    pub lb: Option<f64>,
    /// (implied mean, bind) per estimator.
    pub estimates: Vec<Option<(f64, bool)>>,
    pub error: Option<String>,
}

/// Estimates one simulated panel with the grand-mean first stage.
pub fn estimate_replication(
    panel: &SimPanel,
    estimators: &[EstimatorSpec],
    fit_seed: u64,
) -> (Option<PooledMoments>, Option<f64>, Vec<Option<(f64, bool)>>, Option<String>) {
    let none = vec![None; estimators.len()];
    let pooled = match decompose_grand_mean(&panel.data).and_then(|d| pooled_moments(&d).map(|p| (d, p))) {
        Ok(v) => v,
        Err(e) => return (None, None, none, Some(e.to_string())),
    };
    let (decomp, pm) = pooled;
    let Some(target) = pm.deviation_moments() else {
        return (Some(pm), None, none, Some("incomplete deviation moments".into()));
    };
    let lb = if target[0] > 0.0 { skewness_lower_bound(target[0], target[1]).ok() } else { None };
    let n = decomp.n_firms() as f64;
    let mean_between = decomp.firms.iter().map(|f| f.between).sum::<f64>() / n;
    let floor_ref = decomp.firms.iter().map(|f| (f.between - mean_between).powi(2)).sum::<f64>() / n;
    let fit_target = FitTarget { moments: target, n_eff: n, floor_ref };
    let mut first_err = None;
    let estimates = estimators
        .iter()
        .map(|est| {
            let cfg = FitConfig { seed: fit_seed, ..est.fit.clone() };
            match fit_deviation_distribution(&fit_target, &cfg) {
                Ok(r) => Some((r.implied_mean, r.bind)),
                Err(e) => {
                    first_err.get_or_insert_with(|| format!("{}: {e}", est.label));
                    None
                }
            }
        })
        .collect();
    (Some(pm), lb, estimates, first_err)
}

/// Statistics across replications for one grid point and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointStats {
    pub grid_idx: usize,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub region: RegionLabel,
    pub estimator: String,
    pub reps: usize,
    pub completed: usize,
    pub failures: usize,
    pub true_mean: f64,
    pub true_lb: f64,
    /// Share of completed replications with LB̂ > Ê[u].
    pub share_lb_above_mean: f64,
    pub median_rae_mean: f64,
    pub mean_rae_mean: f64,
    pub median_rae_lb: f64,
    pub mean_rae_lb: f64,
    pub bias: f64,
    pub mse: f64,
    pub bind_share: f64,
}

/// Grid-point statistics aggregated within a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: RegionLabel,
    pub n: usize,
    pub estimator: String,
    pub grid_points: usize,
    pub completed: usize,
    pub failures: usize,
    pub share_lb_above_mean: f64,
    pub median_rae_mean: f64,
    pub median_rae_lb: f64,
    pub median_bias: f64,
    pub median_abs_bias: f64,
    pub mean_abs_bias: f64,
    pub median_mse: f64,
    pub mean_mse: f64,
    pub bind_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub points: Vec<GridPointStats>,
    pub regions: Vec<RegionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub records: Vec<ReplicationRecord>,
    pub truths: Vec<SampleTruth>,
    pub metrics: MetricsTable,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn fit_seed(seed: u64, grid_idx: usize, rep: u32) -> u64 {
    seed ^ (((grid_idx as u64) << 32) | rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs every design for `design.reps` replications. Work items run on the
/// current rayon pool; results are gathered in (grid, replication) order so
/// output does not depend on the number of workers.
pub fn run_experiment(designs: &[SimDesign], estimators: &[EstimatorSpec], reference_draws: usize) -> Result<Experiment> {
    if designs.is_empty() {
        return Err(Error::domain("no designs to run"));
    }
    for d in designs {
        d.validate()?;
    }
    let truths = designs
        .par_iter()
        .enumerate()
        .map(|(g, d)| reference_truth(d, g, reference_draws))
        .collect::<Result<Vec<_>>>()?;
    let work: Vec<(usize, u32)> = designs
        .iter()
        .enumerate()
        .flat_map(|(g, d)| (0..d.reps as u32).map(move |r| (g, r)))
        .collect();
    let records: Vec<ReplicationRecord> = work
        .par_iter()
        .map(|&(g, rep)| {
            let design = &designs[g];
            let mut rng = replication_rng(design.seed, g, rep);
            match generate_panel(design, &mut rng) {
                Ok(panel) => {
                    let (pooled, lb, estimates, error) =
                        estimate_replication(&panel, estimators, fit_seed(design.seed, g, rep));
                    ReplicationRecord { grid_idx: g, rep, pooled, lb, estimates, error }
                }
                Err(e) => ReplicationRecord {
                    grid_idx: g,
                    rep,
                    pooled: None,
                    lb: None,
                    estimates: vec![None; estimators.len()],
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let metrics = summarize(designs, estimators, &truths, &records);
    Ok(Experiment { records, truths, metrics })
}

/// Aggregates replication records into grid-point and region statistics.
pub fn summarize(
    designs: &[SimDesign],
    estimators: &[EstimatorSpec],
    truths: &[SampleTruth],
    records: &[ReplicationRecord],
) -> MetricsTable {
    let mut points = Vec::new();
    for (g, design) in designs.iter().enumerate() {
        let truth = truths[g];
        let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.grid_idx == g).collect();
        for (e, est) in estimators.iter().enumerate() {
            let done: Vec<(f64, bool, f64)> = recs
                .iter()
                .filter_map(|r| {
                    let (m, bind) = r.estimates[e]?;
                    Some((m, bind, r.lb?))
                })
                .collect();
            let k = done.len();
            let rae_mean: Vec<f64> = done.iter().map(|d| (d.0 - truth.mean).abs() / truth.mean).collect();
            let rae_lb: Vec<f64> = done.iter().map(|d| (d.2 - truth.lb).abs() / truth.lb).collect();
            let err: Vec<f64> = done.iter().map(|d| d.0 - truth.mean).collect();
            let share = |pred: &dyn Fn(&(f64, bool, f64)) -> bool| {
                if k == 0 {
                    f64::NAN
                } else {
                    done.iter().filter(|d| pred(d)).count() as f64 / k as f64
                }
            };
            points.push(GridPointStats {
                grid_idx: g,
                a: design.a,
                b: design.b,
                n: design.n,
                region: design.region(),
                estimator: est.label.clone(),
                reps: recs.len(),
                completed: k,
                failures: recs.len() - k,
                true_mean: truth.mean,
                true_lb: truth.lb,
                share_lb_above_mean: share(&|d| d.2 > d.0),
                median_rae_mean: median(&mut rae_mean.clone()),
                mean_rae_mean: mean(&rae_mean),
                median_rae_lb: median(&mut rae_lb.clone()),
                mean_rae_lb: mean(&rae_lb),
                bias: mean(&err),
                mse: mean(&err.iter().map(|x| x * x).collect::<Vec<_>>()),
                bind_share: share(&|d| d.1),
            });
        }
    }

    let mut keys: Vec<(RegionLabel, usize, usize)> = points
        .iter()
        .map(|p| (p.region, p.n, estimators.iter().position(|e| e.label == p.estimator).unwrap_or(0)))
        .collect();
    keys.sort();
    keys.dedup();
    let regions = keys
        .into_iter()
        .map(|(region, n, e)| {
            let label = &estimators[e].label;
            let pts: Vec<&GridPointStats> = points
                .iter()
                .filter(|p| p.region == region && p.n == n && &p.estimator == label && p.completed > 0)
                .collect();
            let col = |f: &dyn Fn(&GridPointStats) -> f64| pts.iter().map(|p| f(p)).collect::<Vec<f64>>();
            let all = points.iter().filter(|p| p.region == region && p.n == n && &p.estimator == label);
            RegionSummary {
                region,
                n,
                estimator: label.clone(),
                grid_points: pts.len(),
                completed: pts.iter().map(|p| p.completed).sum(),
                failures: all.map(|p| p.failures).sum(),
                share_lb_above_mean: mean(&col(&|p| p.share_lb_above_mean)),
                median_rae_mean: mean(&col(&|p| p.median_rae_mean)),
                median_rae_lb: mean(&col(&|p| p.median_rae_lb)),
                median_bias: median(&mut col(&|p| p.bias)),
                median_abs_bias: median(&mut col(&|p| p.bias.abs())),
                mean_abs_bias: mean(&col(&|p| p.bias.abs())),
                median_mse: median(&mut col(&|p| p.mse)),
                mean_mse: mean(&col(&|p| p.mse)),
                bind_share: mean(&col(&|p| p.bind_share)),
            }
        })
        .collect();
    MetricsTable { points, regions }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

impl MetricsTable {
    /// Region aggregates.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.regions {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Per grid point statistics.
    pub fn write_grid_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(io_err(path))
    }
}

/// Writes a simulated panel in the default column layout.
pub fn write_sim_panel(panel: &SimPanel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "firm,period,y,x").map_err(io_err(path))?;
    for f in &panel.data.firms {
        for o in &f.periods {
            writeln!(w, "{},{},{},{}", f.firm_id, o.period, o.y, o.x[0]).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}
