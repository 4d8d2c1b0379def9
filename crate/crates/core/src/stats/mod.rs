//! Statistical kernels used by the Monte Carlo metrics.

mod discrepancy;
mod rng;
mod shapiro;

pub use discrepancy::centered_discrepancy;
pub use rng::{sample_normal, RngStream};
pub use shapiro::shapiro_wilk_w;

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Inverse CDF of Student's t with real-valued degrees of freedom.
pub fn t_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) || !dof.is_finite() {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got {dof}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
    // The library inverse loses absolute accuracy near the median; polish
    // with Newton steps on a CDF that is accurate there.
    let mut q = t.inverse_cdf(p);
    for _ in 0..2 {
        let step = (t_cdf(&t, dof, q) - p) / t.pdf(q);
        if !step.is_finite() {
            break;
        }
        q -= step;
    }
    Ok(q)
}

fn t_cdf(dist: &StudentsT, dof: f64, t: f64) -> f64 {
    let y = t * t / (dof + t * t);
    if y < 0.5 {
        let half = 0.5 * beta_reg(0.5, 0.5 * dof, y);
        if t < 0.0 {
            0.5 - half
        } else {
            0.5 + half
        }
    } else {
        dist.cdf(t)
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Compensated running sum (Neumaier's variant of Kahan summation).
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Compensated mean; `None` for an empty input.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut s = KahanSum::default();
    let mut n = 0usize;
    for v in values {
        s.add(v);
        n += 1;
    }
    (n > 0).then(|| s.value() / n as f64)
}

/// Sample standard deviation with `n − 1` in the denominator; 0 for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied()).unwrap_or(0.0);
    let mut s = KahanSum::default();
    for v in values {
        s.add((v - m) * (v - m));
    }
    (s.value() / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_reference_values() {
        // scipy.stats.t.ppf
        let cases = [
            (35.0, 0.975, 2.030_107_928_250_342_5),
            (10.0, 0.975, 2.228_138_851_964_938_5),
            (37.5, 0.975, 2.025_280_941_194_335_8),
            (2.5, 0.9, 1.730_250_928_807_177),
            (1.0, 0.975, 12.706_204_736_432_095),
            (200.0, 0.6, 0.253_684_379_190_109_17),
        ];
        for (dof, p, want) in cases {
            let got = t_quantile(dof, p).unwrap();
            assert!((got - want).abs() <= 1e-6 * want, "t({dof}, {p}) = {got}, want {want}");
        }
    }

    #[test]
    fn t_median_and_monotonicity() {
        let near = t_quantile(35.0, 0.5 + 5e-10).unwrap();
        assert!((near - 1.262_297_371_317_185_8e-9).abs() <= 1e-6 * 1.26e-9, "{near}");
        for nu in [0.7, 3.0, 37.5, 1e3] {
            assert_eq!(t_quantile(nu, 0.5).unwrap(), 0.0);
        }
        let mut last = 0.0;
        for k in 1..10 {
            let q = t_quantile(12.0, 0.5 + 0.05 * f64::from(k)).unwrap();
            assert!(q > last);
            last = q;
        }
        assert!(t_quantile(5.0, 0.95).unwrap() > t_quantile(50.0, 0.95).unwrap());
        assert!(t_quantile(0.0, 0.9).is_err());
        assert!(t_quantile(4.0, 1.0).is_err());
    }

    #[test]
    fn compensated_mean() {
        let v = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(mean(v), Some(0.5));
        assert_eq!(mean(Vec::<f64>::new()), None);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
