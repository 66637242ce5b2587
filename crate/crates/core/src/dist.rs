//! Parametric families for the nonnegative deviation `u`.
//!
//! Two families are supported: a Beta distribution stretched onto `[0, q]`
//! and a normal distribution truncated to `[0, ∞)`. Both expose analytic mean,
//! central moments up to order four, CDF, quantile and sampling.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{self, binomial, compensated_sum};

/// `u ~ q · Beta(a, b)`, supported on `[0, q]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledBetaParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
}

/// Normal `N(mu, sigma²)` truncated to `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DeviationParams {
    ScaledBeta(ScaledBetaParams),
    TruncNormal(TruncNormalParams),
}

/// Family tag without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ScaledBeta,
    TruncNormal,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled_beta" | "beta" => Ok(Family::ScaledBeta),
            "trunc_normal" | "truncated_normal" | "tn" => Ok(Family::TruncNormal),
            other => Err(Error::domain(format!("unknown deviation family `{other}`"))),
        }
    }
}

impl ScaledBetaParams {
    pub fn new(a: f64, b: f64, q: f64) -> Result<Self> {
        let p = ScaledBetaParams { a, b, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("q", self.q)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("scaled beta `{name}` must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.q * self.a / (self.a + self.b)
    }

    /// Central moments μ2, μ3, μ4 in closed form.
    pub fn central_moments(&self) -> [f64; 3] {
        let (a, b, q) = (self.a, self.b, self.q);
        let s = a + b;
        let ab = a * b;
        let q2 = q * q;
        let mu2 = ab / (s * s * (s + 1.0)) * q2;
        let mu3 = 2.0 * ab * (b - a) / (s * s * s * (s + 1.0) * (s + 2.0)) * q2 * q;
        let mu4 = 3.0 * ab * (ab * (s - 6.0) + 2.0 * s * s)
            / (s * s * s * s * (s + 1.0) * (s + 2.0) * (s + 3.0))
            * q2
            * q2;
        [mu2, mu3, mu4]
    }

    /// E[u^j] = q^j Π_{r<j} (a+r)/(a+b+r).
    pub fn raw_moment(&self, j: u32) -> f64 {
        (0..j).fold(1.0, |acc, r| {
            let r = r as f64;
            acc * self.q * (self.a + r) / (self.a + self.b + r)
        })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        special::beta_reg(self.a, self.b, (t / self.q).clamp(0.0, 1.0))
    }
}

impl TruncNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let p = TruncNormalParams { mu, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::domain(format!("truncated normal `mu` must be finite, got {}", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::domain(format!(
                "truncated normal `sigma` must be finite and > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Standardized truncation point α = −μ/σ.
    fn alpha(&self) -> f64 {
        -self.mu / self.sigma
    }

    /// Raw moments E[W^k], k = 0..=order, of W = Z − α with Z standard normal
    /// truncated to [α, ∞). Since u = σW these give the moments of u directly.
    fn shifted_moments(&self, order: usize) -> Vec<f64> {
        let alpha = self.alpha();
        let mut w = Vec::with_capacity(order + 1);
        w.push(1.0);
        if order >= 1 {
            w.push(special::inv_mills_minus_arg(alpha));
        }
        for k in 1..order {
            // E[W^{k+1}] = k E[W^{k-1}] − α E[W^k]
            let next = compensated_sum([k as f64 * w[k - 1], -alpha * w[k]]);
            w.push(next);
        }
        w
    }

    pub fn mean(&self) -> f64 {
        self.sigma * special::inv_mills_minus_arg(self.alpha())
    }

    pub fn raw_moment(&self, j: u32) -> f64 {
        let w = self.shifted_moments(j as usize);
        self.sigma.powi(j as i32) * w[j as usize]
    }

    pub fn central_moments(&self) -> [f64; 3] {
        let w = self.shifted_moments(4);
        let m = w[1];
        let central = |k: usize| {
            compensated_sum((0..=k).map(|j| binomial(k, j) * w[j] * (-m).powi((k - j) as i32)))
        };
        let s2 = self.sigma * self.sigma;
        [central(2) * s2, central(3) * s2 * self.sigma, central(4) * s2 * s2]
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let z = (t - self.mu) / self.sigma;
        let log_ratio = special::ln_norm_sf(z) - special::ln_norm_sf(self.alpha());
        (-log_ratio.exp_m1()).clamp(0.0, 1.0)
    }
}

impl DeviationParams {
    pub fn family(&self) -> Family {
        match self {
            DeviationParams::ScaledBeta(_) => Family::ScaledBeta,
            DeviationParams::TruncNormal(_) => Family::TruncNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DeviationParams::ScaledBeta(p) => p.validate(),
            DeviationParams::TruncNormal(p) => p.validate(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DeviationParams::ScaledBeta(p) => p.mean(),
            DeviationParams::TruncNormal(p) => p.mean(),
        }
    }

    /// Central moments (μ2, μ3, μ4).
    pub fn central_moments(&self) -> [f64; 3] {
        match self {
            DeviationParams::ScaledBeta(p) => p.central_moments(),
            DeviationParams::TruncNormal(p) => p.central_moments(),
        }
    }

    /// k-th central moment for k ∈ {2, 3, 4}.
    pub fn central_moment(&self, k: usize) -> Result<f64> {
        match k {
            2..=4 => Ok(self.central_moments()[k - 2]),
            _ => Err(Error::domain(format!("central moment order must be 2, 3 or 4, got {k}"))),
        }
    }

    pub fn raw_moment(&self, j: u32) -> f64 {
        match self {
            DeviationParams::ScaledBeta(p) => p.raw_moment(j),
            DeviationParams::TruncNormal(p) => p.raw_moment(j),
        }
    }

    /// P(u ≤ t); zero for t < 0 and nondecreasing in t.
    pub fn cdf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        match self {
            DeviationParams::ScaledBeta(p) => p.cdf(t),
            DeviationParams::TruncNormal(p) => p.cdf(t),
        }
    }

    /// Inverse CDF by bracketed root finding.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::domain(format!("quantile level must lie in (0, 1), got {prob}")));
        }
        let hi = match self {
            DeviationParams::ScaledBeta(p) => p.q,
            DeviationParams::TruncNormal(p) => {
                let mut hi = p.mu.max(0.0) + p.sigma;
                let mut tries = 0;
                while self.cdf(hi) < prob {
                    hi = 2.0 * hi + p.sigma;
                    tries += 1;
                    if tries > 200 {
                        return Err(Error::Numeric("could not bracket truncated normal quantile".into()));
                    }
                }
                hi
            }
        };
        let mut x = special::brent(|t| self.cdf(t) - prob, 0.0, hi, 1e-15, 1e-15, 500)
            .ok_or_else(|| Error::Numeric(format!("quantile root finding failed at level {prob}")))?;
        // Brent stops within a relative tolerance; finish on the ulp lattice so
        // that prob lies between the CDF at x and at a neighbouring double
        for _ in 0..64 {
            if self.cdf(x) < prob && x < hi && self.cdf(x.next_up()) <= prob {
                x = x.next_up();
            } else if self.cdf(x) > prob && x > 0.0 && self.cdf(x.next_down()) >= prob {
                x = x.next_down();
            } else {
                break;
            }
        }
        Ok(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DeviationParams::ScaledBeta(p) => {
                let beta = Beta::new(p.a, p.b).expect("validated beta shapes");
                p.q * beta.sample(rng)
            }
            DeviationParams::TruncNormal(p) => p.sigma * sample_shifted_tail(p.alpha(), rng),
        }
    }
}

/// Draws W = Z − α for Z standard normal conditioned on Z ≥ α.
///
/// Plain rejection from the normal when α is small; otherwise Robert's
/// exponential proposal.
fn sample_shifted_tail<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha < 0.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= alpha {
                return z - alpha;
            }
        }
    }
    let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let w: f64 = exp.sample(rng);
        let z = alpha + w;
        let rho = (-0.5 * (z - rate) * (z - rate)).exp();
        if rng.random::<f64>() <= rho {
            return w;
        }
    }
}
