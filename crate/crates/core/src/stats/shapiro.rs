use super::normal_quantile;
use crate::error::{Error, Result};

// Royston's polynomial corrections for the two extreme coefficients, in
// powers of 1/sqrt(n).
const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Antisymmetric weights for the lower half of the order statistics, with
/// the largest-magnitude weight first. All entries are positive.
fn half_weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let an = n as f64;
    let m: Vec<f64> = (0..half)
        .map(|i| normal_quantile((i as f64 + 1.0 - 0.375) / (an + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / an.sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    let (start, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        a[1] = a2;
        let num = summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1];
        let den = 1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2;
        (2, (num / den).sqrt())
    } else {
        let num = summ2 - 2.0 * m[0] * m[0];
        let den = 1.0 - 2.0 * a1 * a1;
        (1, (num / den).sqrt())
    };
    for k in start..half {
        a[k] = -m[k] / fac;
    }
    a
}

/// Shapiro–Wilk W with Royston's approximation of the coefficients.
pub fn shapiro_wilk_w(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 3 {
        return Err(Error::Domain(format!("Shapiro-Wilk needs at least 3 values, got {n}")));
    }
    if n > 5000 {
        return Err(Error::Domain(format!("Shapiro-Wilk supports at most 5000 values, got {n}")));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in Shapiro-Wilk sample".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range <= 1e-19 * x[n - 1].abs().max(1.0) {
        return Err(Error::Domain("Shapiro-Wilk sample has zero range".into()));
    }
    let half = half_weights(n);
    let mut coef = vec![0.0; n];
    for (i, &w) in half.iter().enumerate() {
        coef[i] = -w;
        coef[n - 1 - i] = w;
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_a = coef.iter().sum::<f64>() / n as f64;
    let (mut saa, mut sxx, mut sax) = (0.0, 0.0, 0.0);
    for (&xi, &ai) in x.iter().zip(&coef) {
        let dx = (xi - mean_x) / range;
        let da = ai - mean_a;
        saa += da * da;
        sxx += dx * dx;
        sax += da * dx;
    }
    let w = (sax * sax / (saa * sxx)).min(1.0);
    Ok(if n == 3 { w.max(0.75) } else { w })
}
