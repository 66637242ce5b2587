//! End-to-end estimation: conditional mean, moment estimation, per-firm
//! distribution fits and frontier assembly.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::skewness_lower_bound;
use crate::error::{Error, Result};
use crate::fit::{
    conditional_sup_frontier, default_bandwidth, effective_sample_size, fit_deviation_distribution, frontier_estimate,
    standardize, FitConfig, FitResult, FitTarget,
};
use crate::moments::{conditional_moments, pooled_moments, ConditionalMoments, PooledMoments};
use crate::panel::{validate, PanelDataset, ValidationReport};
use crate::residualize::{decompose_residuals, fit_conditional_mean, BasisSpec, Conditioning, RidgePenalty};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    /// Basis of the conditional-mean regression.
    pub basis: BasisSpec,
    pub ridge: RidgePenalty,
    pub conditioning: Conditioning,
    /// Basis used to smooth per-firm moment targets over x̄.
    pub moment_basis: BasisSpec,
    pub fit: FitConfig,
    pub min_t: usize,
    /// Radius of the conditional-sup diagnostic in input units; `None`
    /// uses the kernel bandwidth rescaled to the inputs.
    pub sup_radius: Option<f64>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            basis: BasisSpec::default(),
            ridge: RidgePenalty::Gcv,
            conditioning: Conditioning::Xbar,
            moment_basis: BasisSpec::default(),
            fit: FitConfig::default(),
            min_t: 4,
            sup_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModelSummary {
    pub n_cols: usize,
    pub ridge_lambda: f64,
    pub gcv_score: Option<f64>,
    pub ill_posed: bool,
    pub n_extrapolated: usize,
}

/// Moment report written as `moments.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub validation: ValidationReport,
    pub mean_model: MeanModelSummary,
    /// Input-independent moments, the constant-moment benchmark.
    pub pooled: PooledMoments,
    pub pooled_lower_bound: Option<f64>,
    pub conditional: Vec<ConditionalMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmFit {
    pub firm_id: String,
    pub n_eff: f64,
    /// Skewness bound at the firm's conditional moments.
    pub lower_bound: Option<f64>,
    /// `conditional` or `pooled` when conditional moments were unavailable.
    pub moment_source: String,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// Fit report written as `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsReport {
    pub bandwidth: f64,
    pub pooled_fit: Option<FitResult>,
    pub pooled_error: Option<String>,
    pub firms: Vec<FirmFit>,
}

/// One row of `frontier.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCsvRow {
    pub firm: String,
    pub period: String,
    pub mean_prediction: f64,
    pub mean_deviation: f64,
    pub frontier: f64,
    /// Conditional mean plus the pooled implied mean.
    pub frontier_constant_moments: Option<f64>,
    pub sup_diagnostic: Option<f64>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub moments: MomentsReport,
    pub fits: FitsReport,
    pub frontier: Vec<FrontierCsvRow>,
    pub warnings: Vec<String>,
}

fn firm_seed(seed: u64, idx: usize) -> u64 {
    seed ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the three-stage estimator. Per-firm fits run on the current rayon
/// pool and are gathered in firm order.
pub fn run_estimate(data: &PanelDataset, cfg: &EstimateConfig) -> Result<EstimateReport> {
    cfg.fit.validate()?;
    let mut warnings = Vec::new();
    let validation = validate(data, cfg.min_t);
    if data.n_firms() < 2 {
        return Err(Error::DegeneratePanel("fewer than two firms"));
    }
    if !validation.below_min_t.is_empty() {
        warnings.push(format!("{} firms have fewer than {} periods", validation.below_min_t.len(), cfg.min_t));
    }
    if !validation.rejected_rows.is_empty() {
        warnings.push(format!("{} rows rejected on input", validation.rejected_rows.len()));
    }

    let model = fit_conditional_mean(data, &cfg.basis, cfg.ridge, cfg.conditioning)?;
    let (predictions, n_extrapolated) = model.predict_panel(data)?;
    let decomp = decompose_residuals(data, &model)?;
    let pooled = pooled_moments(&decomp)?;
    let pooled_lower_bound = pooled
        .mu3_u
        .filter(|_| pooled.mu2_u > 0.0)
        .and_then(|m3| skewness_lower_bound(pooled.mu2_u, m3).ok());
    let conditional = conditional_moments(&decomp, &cfg.moment_basis, cfg.ridge)?;

    let n = decomp.n_firms();
    let mean_between = decomp.firms.iter().map(|f| f.between).sum::<f64>() / n as f64;
    let floor_ref = decomp.firms.iter().map(|f| (f.between - mean_between).powi(2)).sum::<f64>() / n as f64;

    let (pooled_fit, pooled_error) = match pooled.deviation_moments() {
        Some(m) => match fit_deviation_distribution(&FitTarget { moments: m, n_eff: n as f64, floor_ref }, &cfg.fit) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, Some("pooled fourth moments unavailable".into())),
    };
    if let Some(e) = &pooled_error {
        warnings.push(format!("pooled fit: {e}"));
    }

    let xbar: Vec<Vec<f64>> = decomp.firms.iter().map(|f| f.xbar.clone()).collect();
    let std_x = standardize(&xbar);
    let d = xbar.first().map_or(1, Vec::len);
    let h = cfg.fit.h.unwrap_or_else(|| default_bandwidth(n, d));

    let firms: Vec<FirmFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let firm_id = decomp.firms[i].firm_id.clone();
            let kw = match effective_sample_size(&std_x, i, h) {
                Ok(k) => k,
                Err(e) => {
                    return FirmFit { firm_id, n_eff: f64::NAN, lower_bound: None, moment_source: String::new(), fit: None, error: Some(e.to_string()) }
                }
            };
            let (moments, source) = match conditional[i].deviation_moments() {
                Some(m) => (Some(m), "conditional"),
                None => (pooled.deviation_moments(), "pooled"),
            };
            let Some(m) = moments else {
                return FirmFit {
                    firm_id,
                    n_eff: kw.n_eff,
                    lower_bound: None,
                    moment_source: source.into(),
                    fit: None,
                    error: Some("deviation moments unavailable".into()),
                };
            };
            let lower_bound = if m[0] > 0.0 { skewness_lower_bound(m[0], m[1]).ok() } else { None };
            let fcfg = FitConfig { seed: firm_seed(cfg.fit.seed, i), ..cfg.fit.clone() };
            let target = FitTarget { moments: m, n_eff: kw.n_eff, floor_ref };
            let (fit, error) = match fit_deviation_distribution(&target, &fcfg) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            FirmFit { firm_id, n_eff: kw.n_eff, lower_bound, moment_source: source.into(), fit, error }
        })
        .collect();

    let pooled_mean = pooled_fit.as_ref().map(|r| r.implied_mean);
    let mut failed = 0;
    let mut sources = Vec::with_capacity(n);
    let mean_dev: Vec<f64> = firms
        .iter()
        .map(|f| match (&f.fit, pooled_mean) {
            (Some(r), _) => {
                sources.push(f.moment_source.clone());
                r.implied_mean
            }
            (None, Some(pm)) => {
                failed += 1;
                sources.push("pooled_fallback".into());
                pm
            }
            (None, None) => {
                failed += 1;
                sources.push("none".into());
                f64::NAN
            }
        })
        .collect();
    if failed > 0 {
        warnings.push(format!("{failed} firm fits failed"));
    }
    let n_fallback = firms.iter().filter(|f| f.moment_source == "pooled").count();
    if n_fallback > 0 {
        warnings.push(format!("{n_fallback} firms used pooled moments"));
    }
    let unconverged = firms.iter().filter(|f| f.fit.as_ref().is_some_and(|r| !r.converged)).count();
    if unconverged > 0 {
        warnings.push(format!("{unconverged} firm fits hit the iteration cap"));
    }
    for w in &warnings {
        warn!("{w}");
    }

    let est = frontier_estimate(data, &predictions, &mean_dev)?;
    let radius = cfg.sup_radius.unwrap_or_else(|| {
        let sd = xbar_sd(data);
        h * (sd.iter().map(|s| s * s).sum::<f64>() / sd.len().max(1) as f64).sqrt()
    });
    let sup: Vec<Option<f64>> = data.firms.par_iter().map(|f| conditional_sup_frontier(data, &f.xbar(), radius).ok()).collect();

    let mut frontier = Vec::with_capacity(est.rows.len());
    let mut row = est.rows.into_iter();
    for (i, f) in data.firms.iter().enumerate() {
        for _ in &f.periods {
            let r = row.next().expect("one row per observation");
            frontier.push(FrontierCsvRow {
                firm: r.firm_id,
                period: r.period,
                mean_prediction: r.mean_prediction,
                mean_deviation: r.mean_deviation,
                frontier: r.frontier,
                frontier_constant_moments: pooled_mean.map(|pm| r.mean_prediction + pm),
                sup_diagnostic: sup[i],
                source: sources[i].clone(),
            });
        }
    }

    Ok(EstimateReport {
        moments: MomentsReport {
            validation,
            mean_model: MeanModelSummary {
                n_cols: model.fit.basis.n_cols(),
                ridge_lambda: model.fit.ridge_lambda,
                gcv_score: model.fit.gcv_score,
                ill_posed: model.fit.ill_posed,
                n_extrapolated,
            },
            pooled,
            pooled_lower_bound,
            conditional,
        },
        fits: FitsReport { bandwidth: h, pooled_fit, pooled_error, firms },
        frontier,
        warnings,
    })
}

fn xbar_sd(data: &PanelDataset) -> Vec<f64> {
    let xs: Vec<Vec<f64>> = data.firms.iter().flat_map(|f| f.periods.iter().map(|o| o.x.clone())).collect();
    let n = xs.len() as f64;
    (0..data.input_dim)
        .map(|j| {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            (xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Writes `frontier.csv`.
pub fn write_frontier_csv(rows: &[FrontierCsvRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::Neighborhood;
    use crate::sim::{generate_panel, replication_rng, SimDesign};

    #[test]
    fn pooled_configuration_reduces_to_constant_shift() {
        let d = SimDesign { n: 120, a: 0.5, b: 2.0, ..Default::default() };
        let panel = generate_panel(&d, &mut replication_rng(5, 0, 0)).unwrap();
        let cfg = EstimateConfig {
            basis: BasisSpec::intercept_only(),
            moment_basis: BasisSpec::intercept_only(),
            fit: FitConfig { c: Neighborhood::Unbounded, ..FitConfig::default() },
            ..EstimateConfig::default()
        };
        let r = run_estimate(&panel.data, &cfg).unwrap();
        assert_eq!(r.frontier.len(), 120 * 8);
        let pm = r.fits.pooled_fit.as_ref().unwrap().implied_mean;
        let first = r.frontier[0].mean_deviation;
        for row in &r.frontier {
            assert!((row.mean_deviation - first).abs() < 1e-9, "{row:?}");
            assert_eq!(row.frontier_constant_moments, Some(row.mean_prediction + pm));
            assert_eq!(row.source, "conditional");
        }
        assert!((first - pm).abs() < 0.1 * pm, "{first} vs {pm}");
        let mean_g = r.frontier.iter().map(|x| x.frontier).sum::<f64>() / r.frontier.len() as f64;
        assert!((mean_g - 5.0).abs() < 0.5, "{mean_g}");
    }

    #[test]
    fn too_few_firms() {
        let d = SimDesign { n: 1, ..Default::default() };
        let panel = generate_panel(&d, &mut replication_rng(5, 0, 0)).unwrap();
        assert!(matches!(run_estimate(&panel.data, &EstimateConfig::default()), Err(Error::DegeneratePanel(_))));
    }
}
