use crate::error::{Error, Result};

/// Centered L2 discrepancy of `n` points in `[0, 1]^d`, given as rows.
pub fn centered_discrepancy(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Domain("discrepancy of an empty point set".into()));
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::Shape("points differ in dimension".into()));
        }
        if let Some(&v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("coordinate {v} outside the unit cube")));
        }
    }
    let nf = n as f64;
    let single: f64 = points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&x| {
                    let z = (x - 0.5).abs();
                    1.0 + 0.5 * z - 0.5 * z * z
                })
                .product::<f64>()
        })
        .sum();
    let mut pair = 0.0;
    for a in points {
        for b in points {
            pair += a
                .iter()
                .zip(b)
                .map(|(&x, &y)| 1.0 + 0.5 * (x - 0.5).abs() + 0.5 * (y - 0.5).abs() - 0.5 * (x - y).abs())
                .product::<f64>();
        }
    }
    let sq = (13.0f64 / 12.0).powi(d as i32) - 2.0 / nf * single + pair / (nf * nf);
    Ok(sq.max(0.0).sqrt())
}
