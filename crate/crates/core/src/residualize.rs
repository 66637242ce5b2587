//! Conditional-mean stage: flexible ridge regression of outcomes on inputs and
//! the within/between split of the resulting residuals.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::special::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Polynomial,
    CubicSpline,
}

/// Marginal basis plus optional pairwise interactions, always with an
/// intercept column first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Polynomial degree per margin (ignored for splines).
    pub degree: usize,
    /// Interior knots per margin; `None` applies the ⌈√N / d⌉ rule.
    pub knots: Option<usize>,
    pub max_knots: usize,
    pub interactions: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { kind: BasisKind::CubicSpline, degree: 3, knots: None, max_knots: 8, interactions: true }
    }
}

impl BasisSpec {
    pub fn intercept_only() -> Self {
        BasisSpec { kind: BasisKind::Polynomial, degree: 0, knots: None, max_knots: 0, interactions: false }
    }

    pub fn polynomial(degree: usize, interactions: bool) -> Self {
        BasisSpec { kind: BasisKind::Polynomial, degree, knots: None, max_knots: 0, interactions }
    }

    pub fn cubic_spline(knots: Option<usize>, interactions: bool) -> Self {
        BasisSpec { kind: BasisKind::CubicSpline, knots, interactions, ..BasisSpec::default() }
    }

    /// Default knot count ⌈√n_obs / dim⌉, capped at `max_knots`.
    pub fn knot_count(&self, n_obs: usize, dim: usize) -> usize {
        self.knots.unwrap_or_else(|| {
            let k = ((n_obs as f64).sqrt() / dim.max(1) as f64).ceil() as usize;
            k.min(self.max_knots)
        })
    }
}

/// Covariates the conditional mean is allowed to depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    Xbar,
    Xit,
    Both,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xbar" => Ok(Conditioning::Xbar),
            "xit" => Ok(Conditioning::Xit),
            "both" => Ok(Conditioning::Both),
            other => Err(Error::domain(format!("conditioning must be xbar, xit or both, got `{other}`"))),
        }
    }
}

/// Ridge penalty: fixed, or chosen by generalized cross-validation.
/// Serialized as a number or the string `"gcv"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RidgePenalty {
    Fixed(f64),
    #[default]
    Gcv,
}

impl Serialize for RidgePenalty {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RidgePenalty::Fixed(v) => s.serialize_f64(*v),
            RidgePenalty::Gcv => s.serialize_str("gcv"),
        }
    }
}

impl<'de> Deserialize<'de> for RidgePenalty {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 0.0 && v.is_finite() => Ok(RidgePenalty::Fixed(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("ridge lambda must be >= 0, got {v}"))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for RidgePenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("gcv") {
            return Ok(RidgePenalty::Gcv);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(RidgePenalty::Fixed(v)),
            _ => Err(Error::domain(format!("ridge lambda must be a number >= 0 or `gcv`, got `{s}`"))),
        }
    }
}

const GCV_GRID: usize = 20;

/// A basis fitted to training covariates (knot positions, ranges).
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Clamped cubic knot vectors per margin; `None` for a constant margin.
    knots: Vec<Option<Vec<f64>>>,
    n_cols: usize,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Values of all cubic B-splines on `knots` at `x` (clamped to the range).
fn bspline_values(knots: &[f64], x: f64) -> Vec<f64> {
    const DEG: usize = 3;
    let n_basis = knots.len() - DEG - 1;
    let lo = knots[DEG];
    let hi = knots[n_basis];
    let x = x.clamp(lo, hi);
    // knot span with knots[span] <= x < knots[span + 1], last span closed
    let mut span = DEG;
    while span < n_basis - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut n = [0.0; DEG + 1];
    n[0] = 1.0;
    let mut left = [0.0; DEG + 1];
    let mut right = [0.0; DEG + 1];
    for j in 1..=DEG {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    let mut out = vec![0.0; n_basis];
    for (r, v) in n.iter().enumerate() {
        out[span - DEG + r] = *v;
    }
    out
}

impl Basis {
    pub fn learn(spec: &BasisSpec, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Schema("covariate rows have unequal length".into()));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for j in 0..dim {
                lo[j] = lo[j].min(r[j]);
                hi[j] = hi[j].max(r[j]);
            }
        }
        let mut knots = vec![None; dim];
        let mut n_cols = 1;
        match spec.kind {
            BasisKind::Polynomial => n_cols += dim * spec.degree,
            BasisKind::CubicSpline => {
                let k = spec.knot_count(rows.len(), dim);
                for j in 0..dim {
                    if !(hi[j] > lo[j]) {
                        continue;
                    }
                    let mut vals: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                    vals.sort_by(f64::total_cmp);
                    vals.dedup();
                    let mut interior: Vec<f64> = (1..=k)
                        .map(|i| quantile_sorted(&vals, i as f64 / (k + 1) as f64))
                        .filter(|&t| t > lo[j] && t < hi[j])
                        .collect();
                    interior.dedup();
                    let mut kv = vec![lo[j]; 4];
                    kv.extend(interior);
                    kv.extend([hi[j]; 4]);
                    // drop one function: B-splines sum to one, like the intercept
                    n_cols += kv.len() - 4 - 1;
                    knots[j] = Some(kv);
                }
            }
        }
        let has_main = match spec.kind {
            BasisKind::Polynomial => spec.degree >= 1,
            BasisKind::CubicSpline => true,
        };
        if spec.interactions && has_main && dim >= 2 {
            n_cols += dim * (dim - 1) / 2;
        }
        Ok(Basis { spec: spec.clone(), dim, lo, hi, knots, n_cols })
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// True when `x` lies outside the training range in some coordinate.
    pub fn is_extrapolation(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).any(|(&v, (&l, &h))| v < l || v > h)
    }

    /// One design row; column order is intercept, margins in input order,
    /// then pairwise products x_j·x_k for j < k.
    pub fn row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_cols);
        out.push(1.0);
        match self.spec.kind {
            BasisKind::Polynomial => {
                for &v in x {
                    let mut p = 1.0;
                    for _ in 0..self.spec.degree {
                        p *= v;
                        out.push(p);
                    }
                }
            }
            BasisKind::CubicSpline => {
                for (j, &v) in x.iter().enumerate() {
                    if let Some(kv) = &self.knots[j] {
                        out.extend(bspline_values(kv, v).into_iter().skip(1));
                    }
                }
            }
        }
        if out.len() < self.n_cols {
            for j in 0..self.dim {
                for k in j + 1..self.dim {
                    out.push(x[j] * x[k]);
                }
            }
        }
        debug_assert_eq!(out.len(), self.n_cols);
        out
    }

    pub fn design(&self, rows: &[Vec<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), self.n_cols);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in self.row(r).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Covariate row for every observation, in storage order.
pub fn covariates(data: &PanelDataset, conditioning: Conditioning) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(data.n_obs());
    for firm in &data.firms {
        let xbar = firm.xbar();
        for obs in &firm.periods {
            rows.push(match conditioning {
                Conditioning::Xbar => xbar.clone(),
                Conditioning::Xit => obs.x.clone(),
                Conditioning::Both => obs.x.iter().chain(&xbar).copied().collect(),
            });
        }
    }
    rows
}

/// Design matrix for the panel under the given conditioning.
pub fn build_design(data: &PanelDataset, spec: &BasisSpec, conditioning: Conditioning) -> Result<DMatrix<f64>> {
    let rows = covariates(data, conditioning);
    let basis = Basis::learn(spec, &rows)?;
    if basis.n_cols() >= rows.len() {
        warn!(
            "basis dimension {} is not below the observation count {}; problem is ill-posed without ridge",
            basis.n_cols(),
            rows.len()
        );
    }
    Ok(basis.design(&rows))
}

/// Ridge regression on a fitted basis. The intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    pub gcv_score: Option<f64>,
    /// Basis dimension at least the number of observations.
    pub ill_posed: bool,
}

impl RegressionFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        compensated_sum(self.basis.row(x).iter().zip(&self.coefficients).map(|(a, b)| a * b))
    }
}

fn penalized_solve(xtx: &DMatrix<f64>, xty: &DVector<f64>, lambda: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let p = xtx.nrows();
    let mut a = xtx.clone();
    for j in 1..p {
        a[(j, j)] += lambda;
    }
    // equilibrate before factoring
    let scale: Vec<f64> = (0..p).map(|j| 1.0 / a[(j, j)].max(f64::MIN_POSITIVE).sqrt()).collect();
    let s = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let chol = Cholesky::new(s)?;
    let rhs = DVector::from_fn(p, |i, _| xty[i] * scale[i]);
    let z = chol.solve(&rhs);
    let beta = DVector::from_fn(p, |i, _| z[i] * scale[i]);
    let inv_s = chol.inverse();
    let inv = DMatrix::from_fn(p, p, |i, j| inv_s[(i, j)] * scale[i] * scale[j]);
    Some((beta, inv))
}

fn check_rank(xtx: &DMatrix<f64>) -> Result<()> {
    let p = xtx.nrows();
    let scale: Vec<f64> = (0..p)
        .map(|j| if xtx[(j, j)] > 0.0 { 1.0 / xtx[(j, j)].sqrt() } else { 0.0 })
        .collect();
    if scale.contains(&0.0) {
        return Err(Error::Singular("a basis column is identically zero".into()));
    }
    let s = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(s).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max) {
        return Err(Error::Singular(format!("reciprocal condition number {:.1e}", (min / max).max(0.0))));
    }
    Ok(())
}

/// Fits `y ≈ basis(rows)·β` by ridge regression.
pub fn fit_rows(rows: &[Vec<f64>], y: &[f64], spec: &BasisSpec, ridge: RidgePenalty) -> Result<RegressionFit> {
    if rows.len() != y.len() {
        return Err(Error::Schema("covariate and target lengths differ".into()));
    }
    if rows.is_empty() {
        return Err(Error::domain("cannot fit a regression with no observations"));
    }
    let basis = Basis::learn(spec, rows)?;
    let n = rows.len();
    let p = basis.n_cols();
    let ill_posed = p >= n;
    if ill_posed {
        warn!("basis dimension {p} is not below the observation count {n}; relying on the ridge penalty");
    }
    let x = basis.design(rows);
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;

    let fit_at = |lambda: f64| -> Result<(DVector<f64>, DMatrix<f64>)> {
        penalized_solve(&xtx, &xty, lambda)
            .ok_or_else(|| Error::Singular(format!("normal equations not positive definite at lambda {lambda:e}")))
    };
    let gcv = |beta: &DVector<f64>, inv: &DMatrix<f64>| -> f64 {
        let resid = &yv - &x * beta;
        let rss = resid.norm_squared();
        let trace = (inv * &xtx).trace();
        let denom = n as f64 - trace;
        if denom <= 1e-8 {
            f64::INFINITY
        } else {
            n as f64 * rss / (denom * denom)
        }
    };

    let (lambda, beta, score) = match ridge {
        RidgePenalty::Fixed(lambda) => {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::domain(format!("ridge lambda must be finite and >= 0, got {lambda}")));
            }
            if lambda == 0.0 || p == 1 {
                check_rank(&xtx)?;
            }
            let (beta, _) = fit_at(lambda)?;
            (lambda, beta, None)
        }
        RidgePenalty::Gcv if p == 1 => {
            check_rank(&xtx)?;
            let (beta, inv) = fit_at(0.0)?;
            let s = gcv(&beta, &inv);
            (0.0, beta, Some(s))
        }
        RidgePenalty::Gcv => {
            let base = (1..p).map(|j| xtx[(j, j)]).sum::<f64>() / (p - 1) as f64;
            let base = if base > 0.0 { base } else { 1.0 };
            let mut best: Option<(f64, DVector<f64>, f64)> = None;
            for k in 0..GCV_GRID {
                let lambda = base * 10f64.powf(-8.0 + 11.0 * k as f64 / (GCV_GRID - 1) as f64);
                let Ok((beta, inv)) = fit_at(lambda) else { continue };
                let s = gcv(&beta, &inv);
                if best.as_ref().is_none_or(|b| s < b.2) {
                    best = Some((lambda, beta, s));
                }
            }
            let (lambda, beta, s) = best.ok_or_else(|| Error::Singular("no grid value gave a solvable system".into()))?;
            (lambda, beta, Some(s))
        }
    };
    Ok(RegressionFit { basis, coefficients: beta.iter().copied().collect(), ridge_lambda: lambda, gcv_score: score, ill_posed })
}

/// Fitted conditional mean E[y | covariates].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeanModel {
    pub fit: RegressionFit,
    pub conditioning: Conditioning,
    pub input_dim: usize,
}

impl ConditionalMeanModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.fit.ridge_lambda
    }

    /// Predictions for every observation in storage order, with the number of
    /// covariate rows outside the training range.
    pub fn predict_panel(&self, data: &PanelDataset) -> Result<(Vec<f64>, usize)> {
        if data.input_dim != self.input_dim {
            return Err(Error::Schema(format!(
                "model trained on {} inputs, panel has {}",
                self.input_dim, data.input_dim
            )));
        }
        let rows = covariates(data, self.conditioning);
        let extrapolated = rows.iter().filter(|r| self.fit.basis.is_extrapolation(r)).count();
        Ok((rows.iter().map(|r| self.fit.predict(r)).collect(), extrapolated))
    }
}

pub fn fit_conditional_mean(
    data: &PanelDataset,
    spec: &BasisSpec,
    ridge: RidgePenalty,
    conditioning: Conditioning,
) -> Result<ConditionalMeanModel> {
    let rows = covariates(data, conditioning);
    let fit = fit_rows(&rows, &data.outcomes(), spec, ridge)?;
    Ok(ConditionalMeanModel { fit, conditioning, input_dim: data.input_dim })
}

/// Residuals of one firm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmResiduals {
    pub firm_id: String,
    /// ε̄_i.
    pub between: f64,
    /// ε_it^w = ε_it − ε̄_i.
    pub within: Vec<f64>,
    /// Conditioning covariate x̄_i.
    pub xbar: Vec<f64>,
}

impl FirmResiduals {
    pub fn t(&self) -> usize {
        self.within.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDecomposition {
    pub firms: Vec<FirmResiduals>,
}

/// Order-independent sum: sorts a copy before compensated summation so that
/// permuting the inputs gives the identical double.
pub(crate) fn exchangeable_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    compensated_sum(v)
}

impl ResidualDecomposition {
    /// Splits flat residuals (storage order of `data`) by firm.
    pub fn from_residuals(data: &PanelDataset, residuals: &[f64]) -> Result<Self> {
        if residuals.len() != data.n_obs() {
            return Err(Error::Schema(format!(
                "{} residuals for {} observations",
                residuals.len(),
                data.n_obs()
            )));
        }
        let mut offset = 0;
        let mut firms = Vec::with_capacity(data.n_firms());
        for firm in &data.firms {
            let t = firm.t();
            let eps = &residuals[offset..offset + t];
            offset += t;
            let between = exchangeable_sum(eps) / t as f64;
            firms.push(FirmResiduals {
                firm_id: firm.firm_id.clone(),
                between,
                within: eps.iter().map(|e| e - between).collect(),
                xbar: firm.xbar(),
            });
        }
        Ok(ResidualDecomposition { firms })
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }
}

pub fn decompose_residuals(data: &PanelDataset, model: &ConditionalMeanModel) -> Result<ResidualDecomposition> {
    let (pred, _) = model.predict_panel(data)?;
    let resid: Vec<f64> = data.outcomes().iter().zip(&pred).map(|(y, m)| y - m).collect();
    ResidualDecomposition::from_residuals(data, &resid)
}

/// Residuals about the grand mean, ε_it = y_it − ȳ.
pub fn decompose_grand_mean(data: &PanelDataset) -> Result<ResidualDecomposition> {
    let y = data.outcomes();
    if y.is_empty() {
        return Ok(ResidualDecomposition { firms: Vec::new() });
    }
    let mean = exchangeable_sum(&y) / y.len() as f64;
    let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
    ResidualDecomposition::from_residuals(data, &resid)
}
