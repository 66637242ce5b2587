//! Central moments of the error `v` and the deviation `u` recovered from
//! within and between residuals: per-firm, smoothed conditional, and pooled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residualize::{exchangeable_sum, fit_rows, BasisSpec, ResidualDecomposition, RidgePenalty};
use crate::special::compensated_sum;

/// Moments (μ2, μ3, μ4) of the within residual ε^w for a firm with `t`
/// periods, given the error moments (μ2,v, μ3,v, μ4,v).
pub fn within_identities(mu_v: [f64; 3], t: usize) -> Result<[f64; 3]> {
    if t < 2 {
        return Err(Error::domain(format!("within identities need T >= 2, got {t}")));
    }
    let tf = t as f64;
    let [m2, m3, m4] = mu_v;
    let (c2, c3, c4, c22) = within_coefficients(tf);
    Ok([c2 * m2, c3 * m3, c4 * m4 + c22 * m2 * m2])
}

fn within_coefficients(t: f64) -> (f64, f64, f64, f64) {
    let t3 = t * t * t;
    (
        (t - 1.0) / t,
        (t - 1.0) * (t - 2.0) / (t * t),
        (t - 1.0) * (t * t - 3.0 * t + 3.0) / t3,
        3.0 * (t - 1.0) * (2.0 * t - 3.0) / t3,
    )
}

/// Inverse of [`within_identities`]. The third moment is not identified at
/// T = 2 (its coefficient vanishes) and is returned as `None` there.
pub fn within_identities_inverse(mu_w: [f64; 3], t: usize) -> Result<(f64, Option<f64>, f64)> {
    if t < 2 {
        return Err(Error::domain(format!("within identities need T >= 2, got {t}")));
    }
    let (c2, c3, c4, c22) = within_coefficients(t as f64);
    let m2 = mu_w[0] / c2;
    let m3 = (t >= 3).then(|| mu_w[1] / c3);
    let m4 = (mu_w[2] - c22 * m2 * m2) / c4;
    Ok((m2, m3, m4))
}

/// Moments (μ2, μ3, μ4) of the between residual ε̄ for a firm with `t`
/// periods.
pub fn between_identities(mu_u: [f64; 3], mu_v: [f64; 3], t: usize) -> Result<[f64; 3]> {
    if t < 1 {
        return Err(Error::domain("between identities need T >= 1"));
    }
    let tf = t as f64;
    let t3 = tf * tf * tf;
    let [u2, u3, u4] = mu_u;
    let [v2, v3, v4] = mu_v;
    Ok([
        u2 + v2 / tf,
        -u3 + v3 / (tf * tf),
        u4 + 6.0 * u2 * v2 / tf + v4 / t3 + 3.0 * (tf - 1.0) / t3 * v2 * v2,
    ])
}

/// Per-firm estimates of the error moments. A field is `None` when the
/// firm has too few periods for that estimator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorMomentsPerFirm {
    pub t: usize,
    pub mu2_v: Option<f64>,
    pub mu3_v: Option<f64>,
    pub mu4_v: Option<f64>,
    /// Unbiased estimate of (μ2,v)², not the square of `mu2_v`.
    pub mu2_v_squared: Option<f64>,
}

/// Power sums Σw², Σw³, Σw⁴ and the pair sum Σ_{t<t'} w_t² w_t'², each
/// independent of the order of `w`.
struct PowerSums {
    s2: f64,
    s3: f64,
    s4: f64,
    pair: f64,
}

fn power_sums(w: &[f64]) -> PowerSums {
    let mut v = w.to_vec();
    v.sort_by(f64::total_cmp);
    let s2 = compensated_sum(v.iter().map(|x| x * x));
    let s3 = compensated_sum(v.iter().map(|x| x * x * x));
    let s4 = compensated_sum(v.iter().map(|x| (x * x) * (x * x)));
    PowerSums { s2, s3, s4, pair: 0.5 * (s2 * s2 - s4) }
}

pub fn error_moments_per_firm(within: &[f64]) -> ErrorMomentsPerFirm {
    let t = within.len();
    let tf = t as f64;
    let ps = power_sums(within);
    let denom4 = tf * (tf - 1.0) * (tf - 2.0) * (tf - 3.0);
    ErrorMomentsPerFirm {
        t,
        mu2_v: (t >= 2).then(|| ps.s2 / (tf - 1.0)),
        mu3_v: (t >= 3).then(|| tf / ((tf - 1.0) * (tf - 2.0)) * ps.s3),
        mu4_v: (t >= 4).then(|| {
            ((tf * tf * tf - 2.0 * tf * tf - 3.0 * tf + 9.0) * ps.s4 - 6.0 * (2.0 * tf - 3.0) * ps.pair) / denom4
        }),
        mu2_v_squared: (t >= 4)
            .then(|| (2.0 * (tf * tf - 3.0 * tf + 3.0) * ps.pair - (2.0 * tf - 3.0) * ps.s4) / denom4),
    }
}

/// Between residual powers with the error contribution removed, so that
/// E[û^k | x] = μ_k,u(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedPowers {
    pub u2: Option<f64>,
    pub u3: Option<f64>,
    pub u4: Option<f64>,
}

pub fn adjusted_square(ebar: f64, mu2_v: f64, t: usize) -> f64 {
    ebar * ebar - mu2_v / t as f64
}

pub fn adjusted_cube(ebar: f64, mu3_v: f64, t: usize) -> f64 {
    let tf = t as f64;
    -ebar * ebar * ebar + mu3_v / (tf * tf)
}

/// Fourth adjusted power; needs the already smoothed μ̂2,u at the firm.
pub fn adjusted_fourth(ebar: f64, err: &ErrorMomentsPerFirm, mu2_u: Option<f64>, t: usize) -> Result<Option<f64>> {
    let mu2_u = mu2_u.ok_or(Error::Sequencing("the fourth adjusted power needs the smoothed second moment of u"))?;
    let (Some(v2), Some(v4), Some(v22)) = (err.mu2_v, err.mu4_v, err.mu2_v_squared) else {
        return Ok(None);
    };
    let tf = t as f64;
    let t3 = tf * tf * tf;
    let e2 = ebar * ebar;
    Ok(Some(e2 * e2 - 6.0 * mu2_u * v2 / tf - v4 / t3 - 3.0 * (tf - 1.0) / t3 * v22))
}

pub fn adjusted_deviation_powers(
    ebar: f64,
    err: &ErrorMomentsPerFirm,
    mu2_u_smoothed: Option<f64>,
    t: usize,
) -> Result<AdjustedPowers> {
    if t < 1 {
        return Err(Error::domain("adjusted powers need T >= 1"));
    }
    Ok(AdjustedPowers {
        u2: err.mu2_v.map(|v| adjusted_square(ebar, v, t)),
        u3: err.mu3_v.map(|v| adjusted_cube(ebar, v, t)),
        u4: adjusted_fourth(ebar, err, mu2_u_smoothed, t)?,
    })
}

/// Regresses `targets` on `xbar` and evaluates the fit at every firm.
/// Firms whose target is `None` are left out of the fit but still receive
/// a smoothed value. Returns `None` when fewer than two targets exist.
pub fn smooth_conditional_moments(
    targets: &[Option<f64>],
    xbar: &[Vec<f64>],
    spec: &BasisSpec,
    ridge: RidgePenalty,
) -> Result<Option<Vec<f64>>> {
    if targets.len() != xbar.len() {
        return Err(Error::Schema("targets and covariates differ in length".into()));
    }
    let (rows, ys): (Vec<Vec<f64>>, Vec<f64>) = targets
        .iter()
        .zip(xbar)
        .filter_map(|(t, x)| t.map(|v| (x.clone(), v)))
        .unzip();
    if ys.len() < 2 {
        return Ok(None);
    }
    let fit = fit_rows(&rows, &ys, spec, ridge)?;
    Ok(Some(xbar.iter().map(|x| fit.predict(x)).collect()))
}

/// Smoothed conditional moments evaluated at one firm's x̄_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMoments {
    pub firm_id: String,
    pub t: usize,
    pub xbar: Vec<f64>,
    pub error: ErrorMomentsPerFirm,
    pub mu2_u: Option<f64>,
    pub mu3_u: Option<f64>,
    pub mu4_u: Option<f64>,
}

impl ConditionalMoments {
    pub fn deviation_moments(&self) -> Option<[f64; 3]> {
        Some([self.mu2_u?, self.mu3_u?, self.mu4_u?])
    }
}

/// Conditional moment estimates for every firm, built sequentially: error
/// moments, then μ2,u and μ3,u, then μ4,u using the smoothed μ2,u.
pub fn conditional_moments(
    decomp: &ResidualDecomposition,
    spec: &BasisSpec,
    ridge: RidgePenalty,
) -> Result<Vec<ConditionalMoments>> {
    let n = decomp.n_firms();
    let xbar: Vec<Vec<f64>> = decomp.firms.iter().map(|f| f.xbar.clone()).collect();
    let raw: Vec<ErrorMomentsPerFirm> = decomp.firms.iter().map(|f| error_moments_per_firm(&f.within)).collect();
    let smooth = |targets: Vec<Option<f64>>| smooth_conditional_moments(&targets, &xbar, spec, ridge);

    let v2 = smooth(raw.iter().map(|e| e.mu2_v).collect())?;
    let v3 = smooth(raw.iter().map(|e| e.mu3_v).collect())?;
    let v4 = smooth(raw.iter().map(|e| e.mu4_v).collect())?;
    let v22 = smooth(raw.iter().map(|e| e.mu2_v_squared).collect())?;
    let at = |s: &Option<Vec<f64>>, i: usize| s.as_ref().map(|v| v[i]);
    let err: Vec<ErrorMomentsPerFirm> = (0..n)
        .map(|i| ErrorMomentsPerFirm {
            t: raw[i].t,
            mu2_v: at(&v2, i),
            mu3_v: at(&v3, i),
            mu4_v: at(&v4, i),
            mu2_v_squared: at(&v22, i),
        })
        .collect();

    let ebar: Vec<f64> = decomp.firms.iter().map(|f| f.between).collect();
    let u2 = smooth((0..n).map(|i| err[i].mu2_v.map(|v| adjusted_square(ebar[i], v, raw[i].t))).collect())?;
    let u3 = smooth((0..n).map(|i| err[i].mu3_v.map(|v| adjusted_cube(ebar[i], v, raw[i].t))).collect())?;
    let u4_targets = (0..n)
        .map(|i| adjusted_fourth(ebar[i], &err[i], at(&u2, i), raw[i].t))
        .collect::<Result<Vec<_>>>();
    let u4 = match (&u2, u4_targets) {
        (Some(_), Ok(t)) => smooth(t)?,
        _ => None,
    };

    Ok(decomp
        .firms
        .iter()
        .enumerate()
        .map(|(i, f)| ConditionalMoments {
            firm_id: f.firm_id.clone(),
            t: f.t(),
            xbar: f.xbar.clone(),
            error: err[i],
            mu2_u: at(&u2, i),
            mu3_u: at(&u3, i),
            mu4_u: at(&u4, i),
        })
        .collect())
}

/// Moments estimated by pooling all firms, assuming they do not vary with x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledMoments {
    pub n_firms: usize,
    pub n_obs: usize,
    pub mu2_v: f64,
    pub mu3_v: Option<f64>,
    pub mu4_v: Option<f64>,
    pub mu2_v_squared: Option<f64>,
    pub mu2_u: f64,
    pub mu3_u: Option<f64>,
    pub mu4_u: Option<f64>,
}

impl PooledMoments {
    pub fn deviation_moments(&self) -> Option<[f64; 3]> {
        Some([self.mu2_u, self.mu3_u?, self.mu4_u?])
    }

    /// All seven estimates, or an error naming the first missing one.
    pub fn complete(&self) -> Result<[f64; 7]> {
        Ok([
            self.mu2_v,
            self.mu3_v.ok_or(Error::DegeneratePanel("sum of (T_i-1)(T_i-2)/T_i"))?,
            self.mu4_v.ok_or(Error::DegeneratePanel("fourth-moment determinant AB - 3C^2"))?,
            self.mu2_v_squared.ok_or(Error::DegeneratePanel("fourth-moment determinant AB - 3C^2"))?,
            self.mu2_u,
            self.mu3_u.ok_or(Error::DegeneratePanel("(n-1)(n-2)"))?,
            self.mu4_u.ok_or(Error::DegeneratePanel("fourth between-moment system determinant"))?,
        ])
    }
}

/// Parts of E[Σe⁴] and E[Σ_{i≠k} e_i² e_k²] that are quadratic in the firm
/// variances `s`, for e_i = z_i − z̄ with independent z_i.
fn quadratic_parts(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let total: f64 = s.iter().sum();
    let g: Vec<f64> = s.iter().map(|&si| (1.0 - 2.0 / n) * si + total / (n * n)).collect();
    let g_sum: f64 = g.iter().sum();
    let g_sq: f64 = g.iter().map(|v| v * v).sum();
    // Σ_{i≠k} h_ik² with h_ik = total/n² − (s_i + s_k)/n
    let a = total / (n * n);
    let d: Vec<f64> = s.iter().map(|&si| si / n).collect();
    let d_sum: f64 = d.iter().sum();
    let d_sq: f64 = d.iter().map(|v| v * v).sum();
    let all_pairs = n * n * a * a + 2.0 * n * d_sq - 4.0 * a * n * d_sum + 2.0 * d_sum * d_sum;
    let diag: f64 = d.iter().map(|&di| (a - 2.0 * di).powi(2)).sum();
    (3.0 * g_sq, g_sum * g_sum - g_sq + 2.0 * (all_pairs - diag))
}

/// Pooled fourth moment of u for firm-specific T_i.
///
/// Writes the expectations of P = Σe⁴ and Q = Σ_{i≠k} e_i²e_k² exactly in
/// terms of κ4,u, μ2,u², μ2,u·μ2,v, κ4,v and μ2,v², plugs in the pooled error
/// estimates, and solves the 2×2 system for (κ4,u, μ2,u²).
fn pooled_mu4_u(
    e: &[f64],
    t: &[f64],
    mu2_u: f64,
    mu2_v: f64,
    mu4_v: f64,
    mu22_v: f64,
) -> Option<f64> {
    let n = e.len() as f64;
    if e.len() < 4 {
        return None;
    }
    let e2: Vec<f64> = e.iter().map(|x| x * x).collect();
    let p = compensated_sum(e2.iter().map(|x| x * x));
    let sum_e2 = compensated_sum(e2.iter().copied());
    let q = sum_e2 * sum_e2 - p;
    let gamma4 = (n - 1.0) * (n * n - 3.0 * n + 3.0) / (n * n * n);
    let delta = (n - 1.0) * (2.0 * n - 3.0) / (n * n * n);
    let s3: f64 = compensated_sum(t.iter().map(|ti| 1.0 / (ti * ti * ti)));
    let ones = vec![1.0; e.len()];
    let inv_t: Vec<f64> = t.iter().map(|ti| 1.0 / ti).collect();
    let both: Vec<f64> = inv_t.iter().map(|v| 1.0 + v).collect();
    let (pu, qu) = quadratic_parts(&ones);
    let (pv, qv) = quadratic_parts(&inv_t);
    let (pb, qb) = quadratic_parts(&both);
    let (puv, quv) = (pb - pu - pv, qb - qu - qv);
    let kappa4_v = mu4_v - 3.0 * mu22_v;
    let r_p = p - (gamma4 * s3 * kappa4_v + puv * mu2_u * mu2_v + pv * mu22_v);
    let r_q = q - (delta * s3 * kappa4_v + quv * mu2_u * mu2_v + qv * mu22_v);
    let (m11, m12, m21, m22) = (gamma4 * n, pu, delta * n, qu);
    let det = m11 * m22 - m12 * m21;
    if det.abs() <= 1e-12 * (m11 * m22).abs().max((m12 * m21).abs()) {
        return None;
    }
    let kappa4_u = (r_p * m22 - m12 * r_q) / det;
    let mu2_u_sq = (m11 * r_q - m21 * r_p) / det;
    Some(kappa4_u + 3.0 * mu2_u_sq)
}

/// Pooled estimates of all seven moments from the residual decomposition.
///
/// Firms below a formula's period threshold are left out of that formula's
/// sums. Between residuals are re-centred at their simple mean first.
pub fn pooled_moments(decomp: &ResidualDecomposition) -> Result<PooledMoments> {
    let n = decomp.n_firms();
    if n < 2 {
        return Err(Error::DegeneratePanel("number of firms minus one"));
    }
    let nf = n as f64;
    let sums: Vec<(f64, PowerSums)> = decomp.firms.iter().map(|f| (f.t() as f64, power_sums(&f.within))).collect();
    let agg = |pred: fn(f64) -> bool, term: &dyn Fn(f64, &PowerSums) -> f64| {
        compensated_sum(sums.iter().filter(|(t, _)| pred(*t)).map(|(t, ps)| term(*t, ps)))
    };

    let w2 = agg(|t| t >= 2.0, &|_, ps| ps.s2);
    let d2 = agg(|t| t >= 2.0, &|t, _| t - 1.0);
    if d2 <= 0.0 {
        return Err(Error::DegeneratePanel("sum of (T_i - 1)"));
    }
    let mu2_v = w2 / d2;

    let w3 = agg(|t| t >= 3.0, &|_, ps| ps.s3);
    let d3 = agg(|t| t >= 3.0, &|t, _| (t - 1.0) * (t - 2.0) / t);
    let mu3_v = (d3 > 0.0).then(|| w3 / d3);

    let w4 = agg(|t| t >= 4.0, &|_, ps| ps.s4);
    let pair = agg(|t| t >= 4.0, &|_, ps| ps.pair);
    let a = agg(|t| t >= 4.0, &|t, _| (t - 1.0) * (t * t - 3.0 * t + 3.0) / (t * t));
    let b = agg(|t| t >= 4.0, &|t, _| (t - 1.0) * (t * t * t - 2.0 * t * t - 3.0 * t + 9.0) / (t * t));
    let c = agg(|t| t >= 4.0, &|t, _| (t - 1.0) * (2.0 * t - 3.0) / (t * t));
    let det = a * b - 3.0 * c * c;
    let fourth_ok = det.abs() > 1e-12 * (a * b).abs() && a > 0.0;
    let mu4_v = fourth_ok.then(|| (b * w4 - 6.0 * c * pair) / det);
    let mu2_v_squared = fourth_ok.then(|| (2.0 * a * pair - c * w4) / det);

    let ts: Vec<f64> = decomp.firms.iter().map(|f| f.t() as f64).collect();
    let s1 = compensated_sum(ts.iter().map(|t| 1.0 / t));
    let s2 = compensated_sum(ts.iter().map(|t| 1.0 / (t * t)));
    let raw_between: Vec<f64> = decomp.firms.iter().map(|f| f.between).collect();
    let center = exchangeable_sum(&raw_between) / nf;
    let e: Vec<f64> = raw_between.iter().map(|v| v - center).collect();
    let sorted_e = {
        let mut v = e.clone();
        v.sort_by(f64::total_cmp);
        v
    };
    let sum_e2 = compensated_sum(sorted_e.iter().map(|x| x * x));
    let sum_e3 = compensated_sum(sorted_e.iter().map(|x| x * x * x));
    let mu2_u = sum_e2 / (nf - 1.0) - mu2_v * s1 / nf;
    let mu3_u = match mu3_v {
        Some(v3) if n >= 3 => Some(-nf / ((nf - 1.0) * (nf - 2.0)) * sum_e3 + v3 * s2 / nf),
        _ => None,
    };
    // firm order must not matter: feed the sorted between residuals with their T
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e[i].total_cmp(&e[j]).then(ts[i].total_cmp(&ts[j])));
    let e_sorted: Vec<f64> = order.iter().map(|&i| e[i]).collect();
    let t_sorted: Vec<f64> = order.iter().map(|&i| ts[i]).collect();
    let mu4_u = match (mu4_v, mu2_v_squared) {
        (Some(v4), Some(v22)) => pooled_mu4_u(&e_sorted, &t_sorted, mu2_u, mu2_v, v4, v22),
        _ => None,
    };

    Ok(PooledMoments {
        n_firms: n,
        n_obs: decomp.firms.iter().map(|f| f.t()).sum(),
        mu2_v,
        mu3_v,
        mu4_v,
        mu2_v_squared,
        mu2_u,
        mu3_u,
        mu4_u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residualize::FirmResiduals;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn decomp_from(between: &[f64], within: &[Vec<f64>]) -> ResidualDecomposition {
        ResidualDecomposition {
            firms: between
                .iter()
                .zip(within)
                .enumerate()
                .map(|(i, (&b, w))| FirmResiduals {
                    firm_id: format!("{i:04}"),
                    between: b,
                    within: w.clone(),
                    xbar: vec![i as f64],
                })
                .collect(),
        }
    }

    #[test]
    fn within_identity_examples() {
        assert_eq!(within_identities([1.0, 0.0, 0.0], 2).unwrap()[0], 0.5);
        assert_eq!(within_identities([0.0, 1.0, 0.0], 2).unwrap()[1], 0.0);
        assert_relative_eq!(within_identities([1.0, 0.0, 3.0], 3).unwrap()[2], 4.0 / 3.0, max_relative = 1e-15);
        assert!(within_identities([1.0, 0.0, 3.0], 1).is_err());
    }

    #[test]
    fn within_inverse_round_trip() {
        for t in 2..=12 {
            let mw = within_identities([1.7, -0.4, 9.1], t).unwrap();
            let (m2, m3, m4) = within_identities_inverse(mw, t).unwrap();
            assert_relative_eq!(m2, 1.7, max_relative = 1e-13);
            assert_relative_eq!(m4, 9.1, max_relative = 1e-13);
            match m3 {
                Some(v) => assert_relative_eq!(v, -0.4, max_relative = 1e-13),
                None => assert_eq!(t, 2),
            }
        }
    }

    #[test]
    fn between_identity_examples() {
        let m = between_identities([0.7, 0.3, 2.0], [0.0; 3], 5).unwrap();
        assert_eq!(m, [0.7, -0.3, 2.0]);
        assert_eq!(between_identities([1.0, 0.0, 0.0], [2.0, 0.0, 0.0], 2).unwrap()[0], 2.0);
        assert_relative_eq!(between_identities([1.0, 0.0, 3.0], [2.0, 0.0, 4.0], 2).unwrap()[2], 11.0, max_relative = 1e-15);
    }

    #[test]
    fn per_firm_examples() {
        let e = error_moments_per_firm(&[0.5, -0.5]);
        assert_eq!(e.mu2_v, Some(0.5));
        assert!(e.mu3_v.is_none() && e.mu4_v.is_none() && e.mu2_v_squared.is_none());
        let z = error_moments_per_firm(&[0.0; 8]);
        assert_eq!((z.mu2_v, z.mu3_v, z.mu4_v, z.mu2_v_squared), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
        assert!(error_moments_per_firm(&[1.0]).mu2_v.is_none());
    }

    #[test]
    fn per_firm_estimators_unbiased_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let reps = 40_000;
        let mut acc = [[0.0f64; 2]; 4];
        for _ in 0..reps {
            let v: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
            let m = v.iter().sum::<f64>() / 8.0;
            let w: Vec<f64> = v.iter().map(|x| x - m).collect();
            let e = error_moments_per_firm(&w);
            for (k, val) in [e.mu2_v, e.mu3_v, e.mu4_v, e.mu2_v_squared].into_iter().enumerate() {
                let val = val.unwrap();
                acc[k][0] += val;
                acc[k][1] += val * val;
            }
        }
        for (k, truth) in [1.0, 0.0, 3.0, 1.0].into_iter().enumerate() {
            let mean = acc[k][0] / reps as f64;
            let se = ((acc[k][1] / reps as f64 - mean * mean) / reps as f64).sqrt();
            assert!((mean - truth).abs() < 4.0 * se, "k={k} mean={mean} se={se}");
        }
    }

    #[test]
    fn adjusted_power_examples() {
        let e = ErrorMomentsPerFirm { t: 2, mu2_v: Some(0.5), mu3_v: Some(0.0), mu4_v: None, mu2_v_squared: None };
        assert_eq!(adjusted_square(1.0, 0.5, 2), 0.75);
        assert_eq!(adjusted_cube(-1.0, 0.0, 7), 1.0);
        let zero = ErrorMomentsPerFirm { t: 5, mu2_v: Some(0.0), mu3_v: Some(0.0), mu4_v: Some(0.0), mu2_v_squared: Some(0.0) };
        let p = adjusted_deviation_powers(-0.8, &zero, Some(1.3), 5).unwrap();
        assert_eq!(p.u2, Some(0.8 * 0.8));
        assert_relative_eq!(p.u3.unwrap(), 0.512, max_relative = 1e-15);
        assert_relative_eq!(p.u4.unwrap(), 0.4096, max_relative = 1e-15);
        assert!(matches!(adjusted_deviation_powers(1.0, &e, None, 2), Err(Error::Sequencing(_))));
    }

    #[test]
    fn smoothing_intercept_and_linear() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let targets: Vec<Option<f64>> = [1.0, 3.0, 2.0, 8.0, 0.0, 4.0].into_iter().map(Some).collect();
        let s = smooth_conditional_moments(&targets, &x, &BasisSpec::intercept_only(), RidgePenalty::Fixed(0.0))
            .unwrap()
            .unwrap();
        assert!(s.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let lin: Vec<Option<f64>> = x.iter().map(|r| Some(2.0 - 0.5 * r[0])).collect();
        let s = smooth_conditional_moments(&lin, &x, &BasisSpec::polynomial(1, false), RidgePenalty::Fixed(0.0))
            .unwrap()
            .unwrap();
        for (a, b) in s.iter().zip(&lin) {
            assert!((a - b.unwrap()).abs() < 1e-12);
        }
        assert!(smooth_conditional_moments(&[Some(1.0), None], &x[..2], &BasisSpec::intercept_only(), RidgePenalty::Gcv)
            .unwrap()
            .is_none());
    }

    #[test]
    fn pooled_zero_residuals() {
        let d = decomp_from(&[0.0; 5], &vec![vec![0.0; 6]; 5]);
        let p = pooled_moments(&d).unwrap();
        assert_eq!(p.complete().unwrap(), [0.0; 7]);
    }

    #[test]
    fn pooled_without_error_is_sample_variance() {
        let b = [0.3, -1.2, 0.5, 0.4, 0.0];
        let d = decomp_from(&b, &vec![vec![0.0; 4]; 5]);
        let p = pooled_moments(&d).unwrap();
        let m = b.iter().sum::<f64>() / 5.0;
        let var = b.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        assert_relative_eq!(p.mu2_u, var, max_relative = 1e-14);
    }

    #[test]
    fn pooled_degenerate_panels() {
        let d = decomp_from(&[0.1], &[vec![0.0, 0.0]]);
        assert!(matches!(pooled_moments(&d), Err(Error::DegeneratePanel(_))));
        let d = decomp_from(&[0.1, 0.2], &[vec![0.0], vec![0.0]]);
        assert!(matches!(pooled_moments(&d), Err(Error::DegeneratePanel(_))));
        let d = decomp_from(&[0.1, 0.2, 0.4], &vec![vec![0.1, -0.1, 0.0]; 3]);
        let p = pooled_moments(&d).unwrap();
        assert!(p.mu4_v.is_none() && p.mu3_v.is_some());
        assert!(matches!(p.complete(), Err(Error::DegeneratePanel(_))));
    }

    #[test]
    fn quadratic_parts_balanced_closed_form() {
        // balanced, unit Gaussian: E[Σe⁴] = 3(n−1)²/n
        let n = 7.0;
        let (p, q) = quadratic_parts(&[1.0; 7]);
        assert_relative_eq!(p, 3.0 * (n - 1.0) * (n - 1.0) / n, max_relative = 1e-13);
        // Σe² is χ²(n−1), so E[(Σe²)²] = (n−1)² + 2(n−1)
        assert_relative_eq!(p + q, (n - 1.0) * (n - 1.0) + 2.0 * (n - 1.0), max_relative = 1e-13);
    }
}
