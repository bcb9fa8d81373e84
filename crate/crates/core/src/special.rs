//! Gamma/Beta special functions used by the coverage analytics.

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete Beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::arg(format!(
            "Beta shape parameters must be positive and finite, got a={a}, b={b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::arg(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b)? / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a)? / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Modified Lentz evaluation of the incomplete Beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Convergence(format!(
        "incomplete Beta continued fraction at x={x}, a={a}, b={b}"
    )))
}

/// Inverse of `I_x(a, b)` in `x`, by bisection to machine resolution.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg(format!("probability must lie in [0, 1], got {p}")));
    }
    regularized_incomplete_beta(0.5, a, b)?;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if regularized_incomplete_beta(mid, a, b)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_integers_is_factorial() {
        let mut fact = 1.0f64;
        for n in 1..30 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12 * fact.ln().max(1.0));
            fact *= n as f64;
        }
        let half = ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln();
        assert!(half.abs() < 1e-13);
    }

    #[test]
    fn uniform_case_is_identity() {
        for x in [0.0, 0.3, 1.0] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0).unwrap() - x).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_midpoint_is_half() {
        let v = regularized_incomplete_beta(0.5, 5.0, 5.0).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn reflection_identity() {
        for &(a, b) in &[(0.5, 3.0), (97.0, 4.0), (961.0, 40.0), (2.5, 2.5)] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let l = regularized_incomplete_beta(x, a, b).unwrap();
                let r = 1.0 - regularized_incomplete_beta(1.0 - x, b, a).unwrap();
                assert!((l - r).abs() < 1e-10, "a={a} b={b} x={x}");
            }
        }
    }

    #[test]
    fn closed_form_small_shapes() {
        // I_x(a, 1) = x^a and I_x(1, b) = 1 - (1-x)^b
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            let v = regularized_incomplete_beta(x, 4.0, 1.0).unwrap();
            assert!((v - x.powi(4)).abs() < 1e-12);
            let v = regularized_incomplete_beta(x, 1.0, 3.0).unwrap();
            assert!((v - (1.0 - (1.0 - x).powi(3))).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_tail_identity() {
        // For integer shapes, I_x(k, n-k+1) = P(Bin(n, x) >= k).
        let (n, k, x) = (30u32, 12u32, 0.37f64);
        let mut tail = 0.0;
        for j in k..=n {
            let ln_choose = ln_gamma(n as f64 + 1.0)
                - ln_gamma(j as f64 + 1.0)
                - ln_gamma((n - j) as f64 + 1.0);
            tail += (ln_choose + j as f64 * x.ln() + (n - j) as f64 * (1.0 - x).ln()).exp();
        }
        let v = regularized_incomplete_beta(x, k as f64, (n - k + 1) as f64).unwrap();
        assert!((v - tail).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(regularized_incomplete_beta(-0.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(1.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.005, 0.3, 0.5, 0.995] {
            let q = beta_quantile(p, 97.0, 4.0).unwrap();
            let back = regularized_incomplete_beta(q, 97.0, 4.0).unwrap();
            assert!((back - p).abs() < 1e-10);
        }
    }
}
