//! Run configuration: a single JSON document, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use frontier_mm::dist::Family;
use frontier_mm::fit::FitConfig;
use frontier_mm::panel::PanelSchema;
use frontier_mm::pipeline::EstimateConfig;
use frontier_mm::sim::{grid_designs, representative_designs, EstimatorSpec, SimDesign, REFERENCE_DRAWS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundInput {
    pub mu2: Option<f64>,
    pub mu3: Option<f64>,
    pub mu4: Option<f64>,
    pub mu5: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitDistInput {
    /// (μ2, μ3, μ4) of the deviation.
    pub moments: Option<[f64; 3]>,
    pub n_eff: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityInput {
    /// Raw moments m_1, m_2, ...
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub base: SimDesign,
    /// Explicit (a, b) pairs; takes precedence over `grid`.
    pub shapes: Option<Vec<(f64, f64)>>,
    pub grid: Option<GridSpec>,
    /// Firm counts to cross with every shape; empty uses `base.n`.
    pub n_values: Vec<usize>,
    pub estimators: Vec<FitConfig>,
    pub reference_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            base: SimDesign::default(),
            shapes: None,
            grid: None,
            n_values: Vec::new(),
            estimators: vec![
                FitConfig::unconstrained(Family::ScaledBeta),
                FitConfig::constrained(Family::ScaledBeta, 1.0, 1.0),
                FitConfig::constrained(Family::ScaledBeta, 1.0, 0.5),
            ],
            reference_draws: REFERENCE_DRAWS,
        }
    }
}

impl SimConfig {
    pub fn designs(&self, seed: u64) -> Vec<SimDesign> {
        let base = SimDesign { seed, ..self.base.clone() };
        let shapes = match (&self.shapes, &self.grid) {
            (Some(s), _) => s.iter().map(|&(a, b)| base.with_shape(a, b)).collect(),
            (None, Some(g)) => grid_designs(&base, g.size, g.lo, g.hi),
            (None, None) => representative_designs(&base),
        };
        let ns = if self.n_values.is_empty() { vec![base.n] } else { self.n_values.clone() };
        ns.iter()
            .flat_map(|&n| shapes.iter().map(move |d| SimDesign { n, ..d.clone() }))
            .collect()
    }

    pub fn estimator_specs(&self) -> Vec<EstimatorSpec> {
        self.estimators.iter().cloned().map(EstimatorSpec::new).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    /// Not echoed: the output location does not affect results.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub schema: PanelSchema,
    #[serde(flatten)]
    pub estimate: EstimateConfig,
    pub bound: BoundInput,
    pub fit_dist: FitDistInput,
    pub feasibility: FeasibilityInput,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}
