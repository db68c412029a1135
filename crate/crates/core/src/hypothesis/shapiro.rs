// Shapiro-Wilk W with Royston's coefficient approximation (AS R94), valid for
// 3 <= n <= 5000. The p-value uses Royston's normalizing transformation and is
// informational; the protocol decision is the fixed rule W >= 0.98.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const SW_ACCEPT_THRESHOLD: f64 = 0.98;

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
    pub n: usize,
    pub pass: bool,
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Coefficients `a_1 <= ... <= a_n` (antisymmetric) for sample size `n`.
pub fn sw_coefficients(n: usize) -> Result<Vec<f64>> {
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "Shapiro-Wilk needs 3 <= n <= 5000, got {n}"
        )));
    }
    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
        return Ok(a);
    }
    let norm = std_normal();
    let nf = n as f64;
    let m: Vec<f64> = (1..=n)
        .map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let summ2: f64 = m.iter().map(|v| v * v).sum();
    let ssumm2 = summ2.sqrt();
    let u = 1.0 / nf.sqrt();

    let an = poly(&C1, u) + m[n - 1] / ssumm2;
    if n > 5 {
        let an1 = poly(&C2, u) + m[n - 2] / ssumm2;
        let eps = (summ2 - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2)) / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
        let s = eps.sqrt();
        for i in 2..n - 2 {
            a[i] = m[i] / s;
        }
        a[n - 1] = an;
        a[n - 2] = an1;
        a[0] = -an;
        a[1] = -an1;
    } else {
        let eps = (summ2 - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an);
        let s = eps.sqrt();
        for i in 1..n - 1 {
            a[i] = m[i] / s;
        }
        a[n - 1] = an;
        a[0] = -an;
    }
    Ok(a)
}

/// W statistic, Royston p-value and the `W >= 0.98` decision.
pub fn shapiro_wilk(z: &[f64]) -> Result<ShapiroWilk> {
    let n = z.len();
    let a = sw_coefficients(n)?;
    let mut x = z.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] <= 0.0 {
        return Err(Error::Degenerate("constant sample".into()));
    }
    Ok(with_coefficients(&x, &a))
}

/// W for an already sorted sample and matching coefficients.
pub(crate) fn with_coefficients(sorted: &[f64], a: &[f64]) -> ShapiroWilk {
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let ss: f64 = sorted.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = a.iter().zip(sorted).map(|(ai, xi)| ai * xi).sum();
    let w = (num * num / ss).min(1.0);
    ShapiroWilk {
        w,
        p_value: p_value(w, n),
        n,
        pass: w >= SW_ACCEPT_THRESHOLD,
    }
}

fn p_value(w: f64, n: usize) -> f64 {
    let nf = n as f64;
    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = (0.75f64).sqrt().asin();
        return (pi6 * (w.sqrt().asin() - stqr)).clamp(0.0, 1.0);
    }
    let w1 = (1.0 - w).max(f64::MIN_POSITIVE).ln();
    let z = if n <= 11 {
        let gamma = -2.273 + 0.459 * nf;
        let mu = 0.5440 - 0.39978 * nf + 0.025054 * nf * nf - 6.714e-4 * nf.powi(3);
        let sigma = (1.3822 - 0.77857 * nf + 0.062767 * nf * nf - 0.0020322 * nf.powi(3)).exp();
        let inner = gamma - w1;
        if inner <= 0.0 {
            return 0.0;
        }
        (-inner.ln() - mu) / sigma
    } else {
        let ln_n = nf.ln();
        let mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n * ln_n + 0.0038915 * ln_n.powi(3);
        let sigma = (-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n * ln_n).exp();
        (w1 - mu) / sigma
    };
    std_normal().sf(z).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn three_points_on_a_line() {
        let r = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((r.w - 1.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn coefficients_are_normalized() {
        for n in [4, 5, 6, 20, 335, 5000] {
            let a = sw_coefficients(n).unwrap();
            let ss: f64 = a.iter().map(|v| v * v).sum();
            assert!((ss - 1.0).abs() < 1e-9, "n = {n}: {ss}");
            assert!(a.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn reference_values() {
        // R: shapiro.test(c(148,154,158,160,161,162,166,170,182,195,236))
        // W = 0.79, p = 0.0069 (classic textbook example)
        let x = [
            148.0, 154.0, 158.0, 160.0, 161.0, 162.0, 166.0, 170.0, 182.0, 195.0, 236.0,
        ];
        let r = shapiro_wilk(&x).unwrap();
        assert!((r.w - 0.79).abs() < 0.005, "{}", r.w);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn normal_quantile_sample_is_near_one() {
        let norm = std_normal();
        let x: Vec<f64> = (1..=50).map(|i| norm.inverse_cdf((i as f64 - 0.5) / 50.0)).collect();
        let r = shapiro_wilk(&x).unwrap();
        assert!(r.w > 0.99, "{}", r.w);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn uniform_samples_fail_the_rule() {
        let fails = (0..1000)
            .filter(|&s| {
                let mut r = rng::stream(77, s);
                let x: Vec<f64> = (0..335).map(|_| r.random::<f64>()).collect();
                !shapiro_wilk(&x).unwrap().pass
            })
            .count();
        assert!(fails >= 900, "{fails}");
    }

    #[test]
    fn size_and_errors() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(shapiro_wilk(&vec![0.5; 5001]).is_err());
        assert!(matches!(shapiro_wilk(&[2.0; 10]), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn affine_invariance(
            x in prop::collection::vec(-100.0f64..100.0, 3..200),
            a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
            b in -1e3f64..1e3,
        ) {
            prop_assume!(x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min) > 1e-3);
            let w0 = shapiro_wilk(&x).unwrap().w;
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let w1 = shapiro_wilk(&y).unwrap().w;
            prop_assert!((w0 - w1).abs() < 1e-9);
            prop_assert!(w0 > 0.0 && w0 <= 1.0);
        }
    }
}
