//! Stieltjes feasibility of moment sequences and lower bounds on the mean of
//! a nonnegative variable from its central moments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{binomial, brent, compensated_sum};

/// Highest Hankel order examined.
pub const MAX_HANKEL_ORDER: usize = 4;

const DET_RTOL: f64 = 1e-10;

/// Raw moments m_1..m_J to (mean, [μ2, ..., μ_J]).
pub fn raw_to_central(raw: &[f64]) -> Result<(f64, Vec<f64>)> {
    if raw.len() < 2 {
        return Err(Error::domain(format!("need at least two raw moments, got {}", raw.len())));
    }
    let mean = raw[0];
    let m = |j: usize| if j == 0 { 1.0 } else { raw[j - 1] };
    let central = (2..=raw.len())
        .map(|k| compensated_sum((0..=k).map(|j| binomial(k, j) * m(j) * (-mean).powi((k - j) as i32))))
        .collect();
    Ok((mean, central))
}

/// (mean, [μ2, ..., μ_J]) to raw moments m_1..m_J.
pub fn central_to_raw(mean: f64, central: &[f64]) -> Vec<f64> {
    let mu = |j: usize| match j {
        0 => 1.0,
        1 => 0.0,
        _ => central[j - 2],
    };
    let top = central.len() + 1;
    (1..=top)
        .map(|k| compensated_sum((0..=k).map(|j| binomial(k, j) * mu(j) * mean.powi((k - j) as i32))))
        .collect()
}

/// One Hankel determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HankelDet {
    pub order: usize,
    /// Determinant in the original units.
    pub det: f64,
    /// Determinant after rescaling so that m_2 = 1.
    pub standardized: f64,
    /// Tolerance applied to the standardized determinant.
    pub tol: f64,
    /// The highest moment was absent; its coefficient in the determinant
    /// vanishes so the value does not depend on it.
    pub corner_free: bool,
}

impl HankelDet {
    pub fn passes(&self) -> bool {
        self.standardized >= -self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HankelReport {
    pub primary_dets: Vec<HankelDet>,
    pub shifted_dets: Vec<HankelDet>,
    pub feasible: bool,
}

fn det(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        1.0
    } else {
        m.clone().lu().determinant()
    }
}

/// Hankel matrix with entries m_{i+j+shift}, m_0 = 1. `None` entries are
/// replaced by zero.
fn hankel(m: &[Option<f64>], n: usize, shift: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| m[i + j + shift].unwrap_or(0.0))
}

fn hankel_det(std_m: &[Option<f64>], n: usize, shift: usize, scale: f64) -> Option<HankelDet> {
    let top = 2 * n - 2 + shift;
    if top > std_m.len() {
        return None;
    }
    let corner_missing = top == std_m.len() || std_m[top].is_none();
    let mut m = std_m.to_vec();
    m.resize(top + 1, None);
    let h = hankel(&m, n, shift);
    let diag: f64 = (0..n).map(|i| h[(i, i)].abs()).product();
    let tol = DET_RTOL * diag;
    if corner_missing {
        // det = corner · det(leading minor) + det(with zero corner)
        let minor = h.view((0, 0), (n - 1, n - 1)).into_owned();
        let minor_det = det(&minor);
        let minor_diag: f64 = (0..n - 1).map(|i| minor[(i, i)].abs()).product();
        if minor_det.abs() > DET_RTOL * minor_diag.max(f64::MIN_POSITIVE) {
            return None;
        }
    }
    let d = det(&h);
    let power = if shift == 0 { n * (n - 1) } else { n * n };
    Some(HankelDet { order: n, det: d * scale.powi(power as i32), standardized: d, tol, corner_free: corner_missing })
}

/// Determinants of the primary (entries m_{i+j}) and shifted (entries
/// m_{i+j+1}) Hankel matrices for every order the moments allow, up to
/// [`MAX_HANKEL_ORDER`].
///
/// Moments are rescaled by √m_2 before evaluation. A determinant whose
/// highest moment is missing is still reported when its leading minor is
/// zero, since the determinant then does not depend on that moment.
pub fn hankel_feasibility(raw: &[f64]) -> Result<HankelReport> {
    if raw.is_empty() {
        return Err(Error::domain("Hankel feasibility needs at least m_1"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("raw moments must be finite"));
    }
    let scale = match raw.get(1) {
        Some(&m2) if m2 > 0.0 => m2.sqrt(),
        _ => 1.0,
    };
    // standardized moments with m_0 = 1 at index 0
    let mut std_m: Vec<Option<f64>> = vec![Some(1.0)];
    std_m.extend(raw.iter().enumerate().map(|(k, v)| Some(v / scale.powi(k as i32 + 1))));

    let mut primary = Vec::new();
    let mut shifted = Vec::new();
    for n in 1..=MAX_HANKEL_ORDER {
        if n >= 2 {
            if let Some(d) = hankel_det(&std_m, n, 0, scale) {
                primary.push(d);
            }
        }
        if let Some(d) = hankel_det(&std_m, n, 1, scale) {
            shifted.push(d);
        }
    }
    let feasible = primary.iter().chain(&shifted).all(HankelDet::passes);
    Ok(HankelReport { primary_dets: primary, shifted_dets: shifted, feasible })
}

/// Checks one order explicitly; errors when the moments needed are absent.
pub fn hankel_order(raw: &[f64], n: usize, shifted: bool) -> Result<HankelDet> {
    let need = if shifted { 2 * n - 1 } else { 2 * n - 2 };
    if n == 0 || raw.len() < need {
        return Err(Error::domain(format!(
            "order-{n} {} Hankel determinant needs moments up to m_{need}",
            if shifted { "shifted" } else { "primary" }
        )));
    }
    let scale = match raw.get(1) {
        Some(&m2) if m2 > 0.0 => m2.sqrt(),
        _ => 1.0,
    };
    let mut std_m: Vec<Option<f64>> = vec![Some(1.0)];
    std_m.extend(raw[..need].iter().enumerate().map(|(k, v)| Some(v / scale.powi(k as i32 + 1))));
    hankel_det(&std_m, n, usize::from(shifted), scale).ok_or_else(|| Error::domain("moments exhausted"))
}

/// Determinant of the central-moment Hankel matrix of order n (entries
/// μ_{i+j}, μ_0 = 1, μ_1 = 0). `central` holds μ2, μ3, ...
pub fn central_hankel_det(central: &[f64], n: usize) -> Result<f64> {
    if n >= 2 && central.len() < 2 * n - 3 {
        return Err(Error::domain(format!("order {n} needs central moments up to μ_{}", 2 * n - 2)));
    }
    let mu = |j: usize| match j {
        0 => 1.0,
        1 => 0.0,
        _ => central[j - 2],
    };
    Ok(det(&DMatrix::from_fn(n, n, |i, j| mu(i + j))))
}

fn check_mu2(mu2: f64) -> Result<()> {
    if !(mu2 > 0.0 && mu2.is_finite()) {
        return Err(Error::domain(format!("the second central moment must be positive, got {mu2}")));
    }
    Ok(())
}

/// Larger root of μ2·t² + μ3·t − μ2² = 0, i.e. (σ/2)(−γ + √(γ² + 4)).
pub fn skewness_lower_bound(mu2: f64, mu3: f64) -> Result<f64> {
    check_mu2(mu2)?;
    let sigma = mu2.sqrt();
    let gamma = mu3 / (mu2 * sigma);
    let root = (gamma * gamma + 4.0).sqrt();
    Ok(if gamma >= 0.0 {
        2.0 * sigma / (gamma + root)
    } else {
        0.5 * sigma * (root - gamma)
    })
}

/// σ·√κ = √(μ4/μ2) when μ3 ≤ 0 and μ5 ≤ 0; `None` otherwise.
pub fn kurtosis_lower_bound(mu2: f64, mu3: f64, mu4: f64, mu5: f64) -> Result<Option<f64>> {
    check_mu2(mu2)?;
    if mu4 < 0.0 {
        return Err(Error::domain(format!("the fourth central moment must be nonnegative, got {mu4}")));
    }
    Ok((mu3 <= 0.0 && mu5 <= 0.0).then(|| (mu4 / mu2).sqrt()))
}

/// Coefficients (c3, c2, c1, c0) of the cubic in the mean t whose
/// nonnegativity is the order-3 shifted Hankel condition.
pub fn cubic_coefficients(mu2: f64, mu3: f64, mu4: f64, mu5: f64) -> [f64; 4] {
    [
        mu2 * mu4 - mu2 * mu2 * mu2 - mu3 * mu3,
        mu2 * mu5 - mu2 * mu2 * mu3 - mu3 * mu4,
        mu3 * mu5 - mu4 * mu4 - mu2 * mu3 * mu3 + mu2 * mu2 * mu4,
        2.0 * mu2 * mu3 * mu4 - mu3 * mu3 * mu3 - mu2 * mu2 * mu5,
    ]
}

pub fn cubic_value(coef: &[f64; 4], t: f64) -> f64 {
    ((coef[0] * t + coef[1]) * t + coef[2]) * t + coef[3]
}

/// Whether mean `t` satisfies the cubic inequality (within a relative
/// tolerance on the polynomial's scale).
pub fn cubic_mean_feasible(mu2: f64, mu3: f64, mu4: f64, mu5: f64, t: f64) -> Result<bool> {
    check_mu2(mu2)?;
    let c = cubic_coefficients(mu2, mu3, mu4, mu5);
    let scale = c.iter().enumerate().map(|(k, ck)| ck.abs() * t.abs().powi(3 - k as i32)).sum::<f64>();
    Ok(t >= 0.0 && cubic_value(&c, t) >= -DET_RTOL * scale)
}

/// Result of the cubic scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicScan {
    pub lower: Option<f64>,
    pub start: f64,
    pub note: Option<String>,
}

/// Smallest t ≥ max(0, skewness bound) satisfying the cubic inequality.
///
/// Scans a geometric grid for the first sign change, then refines by Brent.
pub fn cubic_lower_bound(mu2: f64, mu3: f64, mu4: f64, mu5: f64) -> Result<CubicScan> {
    let start = skewness_lower_bound(mu2, mu3)?.max(0.0);
    let c = cubic_coefficients(mu2, mu3, mu4, mu5);
    let f = |t: f64| cubic_value(&c, t);
    if f(start) >= 0.0 {
        return Ok(CubicScan { lower: Some(start), start, note: None });
    }
    let sigma = mu2.sqrt();
    let mut lo = start;
    let mut hi = if start > 0.0 { start } else { sigma * 1e-6 };
    let ratio: f64 = 1.05;
    for _ in 0..1000 {
        hi *= ratio;
        if f(hi) >= 0.0 {
            let root = brent(f, lo, hi, 1e-14, 0.0, 200).unwrap_or(hi);
            return Ok(CubicScan { lower: Some(root), start, note: None });
        }
        lo = hi;
        if hi > sigma * 1e12 {
            break;
        }
    }
    Ok(CubicScan {
        lower: None,
        start,
        note: Some(format!(
            "cubic stays negative up to {hi:.3e}; leading coefficient {:.3e} suggests infeasible moments",
            c[0]
        )),
    })
}

/// Bounds and diagnostics derived from central moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: Option<f64>,
    pub mu5: Option<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub kappa: Option<f64>,
    pub lb_skew: f64,
    pub lb_kurt: Option<f64>,
    pub cubic_lb: Option<f64>,
    /// κ ≥ γ² + 1, the order-3 primary Hankel condition.
    pub kurtosis_skewness_ok: Option<bool>,
    /// Feasibility of the full sequence when a mean is supplied.
    pub hankel: Option<HankelReport>,
    pub notes: Vec<String>,
}

pub fn bound_report(
    mu2: f64,
    mu3: f64,
    mu4: Option<f64>,
    mu5: Option<f64>,
    mean: Option<f64>,
) -> Result<BoundReport> {
    check_mu2(mu2)?;
    let sigma = mu2.sqrt();
    let gamma = mu3 / (mu2 * sigma);
    let kappa = mu4.map(|m4| m4 / (mu2 * mu2));
    let mut notes = Vec::new();
    let lb_kurt = match (mu4, mu5) {
        (Some(m4), Some(m5)) => kurtosis_lower_bound(mu2, mu3, m4, m5)?,
        _ => None,
    };
    let cubic_lb = match (mu4, mu5) {
        (Some(m4), Some(m5)) => {
            let scan = cubic_lower_bound(mu2, mu3, m4, m5)?;
            notes.extend(scan.note);
            scan.lower
        }
        _ => None,
    };
    let kurtosis_skewness_ok = kappa.map(|k| k >= gamma * gamma + 1.0 - 1e-10 * k.abs().max(1.0));
    if kurtosis_skewness_ok == Some(false) {
        notes.push("kurtosis below squared skewness plus one: no distribution has these moments".into());
    }
    let hankel = match mean {
        Some(m1) => {
            let mut central = vec![mu2, mu3];
            if let Some(m4) = mu4 {
                central.push(m4);
                if let Some(m5) = mu5 {
                    central.push(m5);
                }
            }
            Some(hankel_feasibility(&central_to_raw(m1, &central))?)
        }
        None => None,
    };
    Ok(BoundReport {
        mu2,
        mu3,
        mu4,
        mu5,
        sigma,
        gamma,
        kappa,
        lb_skew: skewness_lower_bound(mu2, mu3)?,
        lb_kurt,
        cubic_lb,
        kurtosis_skewness_ok,
        hankel,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn raw_central_examples() {
        let (m, c) = raw_to_central(&[1.0, 1.0]).unwrap();
        assert_eq!((m, c[0]), (1.0, 0.0));
        let (m, c) = raw_to_central(&[1.0, 2.0, 6.0]).unwrap();
        assert_eq!(m, 1.0);
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c[1], 2.0, epsilon = 1e-15);
        assert_eq!(central_to_raw(0.0, &[1.0, 0.0]), vec![0.0, 1.0, 0.0]);
        assert!(raw_to_central(&[1.0]).is_err());
    }

    #[test]
    fn exponential_central_moments() {
        let raw = [1.0, 2.0, 6.0, 24.0, 120.0];
        let (_, c) = raw_to_central(&raw).unwrap();
        for (got, want) in c.iter().zip([1.0, 2.0, 9.0, 44.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-14);
        }
    }

    #[test]
    fn hankel_examples() {
        let point = hankel_feasibility(&[1.0; 7]).unwrap();
        assert!(point.feasible);
        for d in point.primary_dets.iter().chain(&point.shifted_dets).filter(|d| d.order >= 2) {
            assert!(d.det.abs() < 1e-12, "{d:?}");
        }
        let exp = hankel_feasibility(&[1.0, 2.0, 6.0]).unwrap();
        assert!(exp.feasible);
        let d2 = exp.shifted_dets.iter().find(|d| d.order == 2).unwrap();
        assert_relative_eq!(d2.det, 2.0, max_relative = 1e-14);

        let bad = hankel_feasibility(&[0.0, 1.0]).unwrap();
        assert!(!bad.feasible);
        let d2 = bad.shifted_dets.iter().find(|d| d.order == 2).unwrap();
        assert!(d2.corner_free);
        assert_eq!(d2.det, -1.0);
    }

    #[test]
    fn hankel_order_errors_name_needed_moment() {
        let err = hankel_order(&[1.0, 2.0], 2, true).unwrap_err();
        assert!(err.to_string().contains("m_3"), "{err}");
        let d = hankel_order(&[1.0, 2.0, 6.0], 2, true).unwrap();
        assert_relative_eq!(d.det, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn primary_det_matches_central_form() {
        let raw = [1.0, 2.0, 6.0, 24.0, 120.0, 720.0];
        let (mean, c) = raw_to_central(&raw).unwrap();
        let report = hankel_feasibility(&raw).unwrap();
        for d in &report.primary_dets {
            let want = central_hankel_det(&c, d.order).unwrap();
            assert_relative_eq!(d.det, want, max_relative = 1e-9);
        }
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn skewness_bound_examples() {
        assert_eq!(skewness_lower_bound(4.0, 0.0).unwrap(), 2.0);
        assert_relative_eq!(skewness_lower_bound(1.0, 2.0).unwrap(), 2f64.sqrt() - 1.0, max_relative = 1e-15);
        assert_relative_eq!(skewness_lower_bound(1.0, -1.0).unwrap(), (1.0 + 5f64.sqrt()) / 2.0, max_relative = 1e-15);
        assert!(skewness_lower_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn kurtosis_bound_examples() {
        assert_relative_eq!(kurtosis_lower_bound(1.0, 0.0, 3.0, 0.0).unwrap().unwrap(), 3f64.sqrt(), max_relative = 1e-15);
        assert!(kurtosis_lower_bound(1.0, 0.1, 3.0, 0.0).unwrap().is_none());
        assert_relative_eq!(kurtosis_lower_bound(4.0, -1.0, 32.0, -2.0).unwrap().unwrap(), 8f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn cubic_matches_shifted_determinant() {
        // exponential: P(1) equals det of the order-3 shifted Hankel matrix, 24
        let c = cubic_coefficients(1.0, 2.0, 9.0, 44.0);
        assert_relative_eq!(cubic_value(&c, 1.0), 24.0, max_relative = 1e-14);
        assert!(cubic_mean_feasible(1.0, 2.0, 9.0, 44.0, 1.0).unwrap());
        for &t in &[0.3, 1.7, 4.0] {
            let raw = central_to_raw(t, &[1.3, 0.4, 5.2, 3.1]);
            let h = DMatrix::from_fn(3, 3, |i, j| raw[i + j]);
            let want = h.lu().determinant();
            let got = cubic_value(&cubic_coefficients(1.3, 0.4, 5.2, 3.1), t);
            assert_relative_eq!(got, want, max_relative = 1e-10, epsilon = 1e-10);
        }
        assert_eq!(cubic_value(&c, 0.0), c[3]);
    }

    #[test]
    fn gaussian_shaped_cubic_root_is_kurtosis_bound() {
        let mu2: f64 = 2.5;
        let scan = cubic_lower_bound(mu2, 0.0, 3.0 * mu2 * mu2, 0.0).unwrap();
        let kb = kurtosis_lower_bound(mu2, 0.0, 3.0 * mu2 * mu2, 0.0).unwrap().unwrap();
        assert_relative_eq!(scan.lower.unwrap(), kb, max_relative = 1e-10);
    }

    #[test]
    fn report_fields() {
        let r = bound_report(1.0, 2.0, Some(9.0), Some(44.0), Some(1.0)).unwrap();
        assert!(r.hankel.as_ref().unwrap().feasible);
        assert_eq!(r.kurtosis_skewness_ok, Some(true));
        assert!(r.lb_kurt.is_none());
        assert!(r.cubic_lb.unwrap() <= 1.0 + 1e-12);
        assert!(r.cubic_lb.unwrap() >= r.lb_skew);
        assert!(bound_report(-1.0, 0.0, None, None, None).is_err());
    }
}
