//! Scalar special functions: regularized incomplete beta, normal tails, and
//! a bracketed root finder.

use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF, Φ(x) = erfc(−x/√2)/2.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail Q(x) = 1 − Φ(x), accurate in the far right tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// ln Q(x), finite for every finite x.
pub fn ln_norm_sf(x: f64) -> f64 {
    if x < -5.0 {
        (-norm_cdf(x)).ln_1p()
    } else if x < 8.0 {
        norm_sf(x).ln()
    } else {
        // Q(x) = φ(x) / (x + K(x))
        -0.5 * x * x - LN_SQRT_2PI - (x + mills_tail(x)).ln()
    }
}

/// K(x) = 1/(x + 2/(x + 3/(x + ...))), the gap λ(x) − x between the inverse
/// Mills ratio λ(x) = φ(x)/Q(x) and its argument. Valid for x ≥ 3.
fn mills_tail(x: f64) -> f64 {
    let terms = if x > 8.0 { 60 } else { 400 };
    let mut v = x;
    for k in (2..=terms).rev() {
        v = x + k as f64 / v;
    }
    1.0 / v
}

/// λ(x) − x for the inverse Mills ratio λ(x) = φ(x)/Q(x). Always positive;
/// computed without cancellation for large x.
pub fn inv_mills_minus_arg(x: f64) -> f64 {
    if x >= 3.0 {
        mills_tail(x)
    } else {
        norm_pdf(x) / norm_sf(x) - x
    }
}

/// Regularized incomplete beta I_x(a, b).
///
/// Continued fraction (modified Lentz) with the usual symmetry switch at
/// x = (a+1)/(a+b+2). Very large shapes whose fraction fails to converge fall
/// back to a normal approximation.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        match beta_cf(a, b, x) {
            Some(cf) => (ln_front.exp() * cf / a).clamp(0.0, 1.0),
            None => beta_reg_normal_approx(a, b, x),
        }
    } else {
        match beta_cf(b, a, 1.0 - x) {
            Some(cf) => (1.0 - ln_front.exp() * cf / b).clamp(0.0, 1.0),
            None => beta_reg_normal_approx(a, b, x),
        }
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Option<f64> {
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    let max_iter = 20_000;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= EPS {
            return Some(h);
        }
    }
    None
}

fn beta_reg_normal_approx(a: f64, b: f64, x: f64) -> f64 {
    let s = a + b;
    let mean = a / s;
    let sd = (a * b / (s * s * (s + 1.0))).sqrt();
    norm_cdf((x - mean) / sd)
}

/// Brent's method on a sign-changing bracket [lo, hi].
///
/// Stops once the bracket is narrower than `xtol` (relative to |x|) or
/// |f| ≤ `ftol`. Returns `None` if the bracket does not change sign.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol * b.abs().max(f64::MIN_POSITIVE);
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol {
            b += d;
        } else {
            b += tol * m.signum();
        }
        fb = f(b);
        if fb.is_nan() {
            return None;
        }
    }
    Some(b)
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_reg_uniform_and_symmetry() {
        assert_relative_eq!(beta_reg(1.0, 1.0, 0.3), 0.3, epsilon = 1e-15);
        for &(a, b, x) in &[(2.0, 3.0, 0.4), (0.3, 5.0, 0.01), (7.5, 0.6, 0.93)] {
            let lhs = beta_reg(a, b, x);
            let rhs = 1.0 - beta_reg(b, a, 1.0 - x);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
        }
    }

    #[test]
    fn beta_reg_closed_forms() {
        // I_x(a, 1) = x^a and I_x(1, b) = 1 - (1-x)^b
        assert_relative_eq!(beta_reg(3.5, 1.0, 0.7), 0.7f64.powf(3.5), max_relative = 1e-14);
        assert_relative_eq!(
            beta_reg(1.0, 0.25, 0.6),
            1.0 - 0.4f64.powf(0.25),
            max_relative = 1e-14
        );
        // I_x(2,2) = 3x^2 - 2x^3
        let x: f64 = 0.35;
        assert_relative_eq!(beta_reg(2.0, 2.0, x), 3.0 * x * x - 2.0 * x.powi(3), max_relative = 1e-14);
    }

    #[test]
    fn normal_tails_agree() {
        for &x in &[-6.0, -2.0, 0.0, 1.5, 4.0, 7.9, 8.1, 12.0, 30.0] {
            let direct = norm_sf(x).ln();
            if direct.is_finite() {
                assert_relative_eq!(ln_norm_sf(x), direct, max_relative = 1e-12);
            }
        }
        assert_relative_eq!(norm_cdf(1.0) - norm_cdf(-1.0), 0.682_689_492_137_085_9, epsilon = 1e-15);
    }

    #[test]
    fn mills_gap_continuous_at_switch() {
        let below = norm_pdf(3.0) / norm_sf(3.0) - 3.0;
        assert_relative_eq!(mills_tail(3.0), below, max_relative = 1e-12);
        let at10 = norm_pdf(10.0) / norm_sf(10.0) - 10.0;
        assert_relative_eq!(inv_mills_minus_arg(10.0), at10, max_relative = 1e-9);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 0.0, 200).unwrap();
        assert_relative_eq!(r, 2f64.cbrt(), max_relative = 1e-14);
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0, 100).is_none());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s = compensated_sum([1e16, 1.0, -1e16, 1.0]);
        assert_eq!(s, 2.0);
    }
}
