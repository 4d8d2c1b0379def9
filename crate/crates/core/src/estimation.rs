//! Weighted least squares with box bounds, linearized covariance and the
//! interval estimates built on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{stacked_jacobian, stacked_response, DesignMatrix, Model, ParameterBounds, ParameterMask};
use crate::stats::t_quantile;

/// Measured responses of a design, stacked experiment-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub design: DesignMatrix,
    /// `len() = design.len() · n_responses`
    pub values: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(design: DesignMatrix, values: Vec<f64>, n_responses: usize) -> Result<Self> {
        if values.len() != design.len() * n_responses {
            return Err(Error::Shape(format!(
                "{} measurements for {} experiments of {n_responses} responses",
                values.len(),
                design.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite measurement at position {i}")));
        }
        Ok(Self { design, values })
    }

    pub fn n_experiments(&self) -> usize {
        self.design.len()
    }

    pub fn append(&mut self, other: &MeasurementSet) {
        self.design.extend(&other.design);
        self.values.extend_from_slice(&other.values);
    }
}

/// Noise level of every stacked row.
pub(crate) fn row_sigmas(sigma: &[f64], n_rows: usize) -> Vec<f64> {
    (0..n_rows).map(|r| sigma[r % sigma.len()]).collect()
}

/// `Φ = Σ ((y − y^m)/σ)²`.
pub fn wls_objective<M: Model + ?Sized>(model: &M, theta: &[f64], data: &MeasurementSet) -> Result<f64> {
    let y = stacked_response(model, &data.design, theta)?;
    let sigma = model.sigma();
    Ok(weighted_ssq(&y, &data.values, &sigma))
}

fn weighted_ssq(y: &[f64], ym: &[f64], sigma: &[f64]) -> f64 {
    y.iter()
        .zip(ym)
        .enumerate()
        .map(|(r, (a, b))| {
            let e = (a - b) / sigma[r % sigma.len()];
            e * e
        })
        .sum()
}

/// `N_μ − N_θ/N_y`.
pub fn dof(n_experiments: usize, n_active: usize, n_responses: usize) -> Result<f64> {
    if n_experiments == 0 || n_responses == 0 {
        return Err(Error::Domain("degrees of freedom need experiments and responses".into()));
    }
    let d = n_experiments as f64 - n_active as f64 / n_responses as f64;
    if d <= 0.0 {
        return Err(Error::Domain(format!(
            "non-positive degrees of freedom ({n_experiments} experiments, {n_active} parameters, {n_responses} responses)"
        )));
    }
    Ok(d)
}

/// Per-response `sqrt(Σ_μ e²/DOF)` from stacked residuals.
pub fn estimate_measurement_error(residuals: &[f64], n_responses: usize, dof: f64) -> Result<Vec<f64>> {
    if !(dof > 0.0) {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got {dof}")));
    }
    let mut ss = vec![0.0; n_responses];
    for (r, e) in residuals.iter().enumerate() {
        ss[r % n_responses] += e * e;
    }
    Ok(ss.into_iter().map(|s| (s / dof).sqrt()).collect())
}

/// `Sᵀ C_M⁻¹ S` with diagonal measurement covariance.
pub fn fisher_information(s: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let mut w = s.clone();
    for r in 0..w.nrows() {
        let inv = 1.0 / sigma[r % sigma.len()];
        w.row_mut(r).scale_mut(inv);
    }
    w.transpose() * w
}

/// Largest admissible condition number of the equilibrated information matrix.
pub const MAX_CONDITION: f64 = 1e14;

/// Inverse of a symmetric positive semidefinite information matrix after
/// diagonal equilibration. Fails with [`Error::Singular`] when the
/// equilibrated condition number exceeds [`MAX_CONDITION`].
pub fn invert_information(fim: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = fim.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let d: Vec<f64> = (0..n).map(|i| fim[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let scale: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let eq = DMatrix::from_fn(n, n, |i, j| fim[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(eq);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let q = &eig.eigenvectors;
    let inv_eq = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    let c = DMatrix::from_fn(n, n, |i, j| inv_eq[(i, j)] * scale[i] * scale[j]);
    Ok((&c + c.transpose()) * 0.5)
}

/// `(Sᵀ C_M⁻¹ S)⁻¹`, symmetrized.
pub fn covariance_matrix(s: &DMatrix<f64>, sigma: &[f64]) -> Result<DMatrix<f64>> {
    invert_information(&fisher_information(s, sigma))
}

/// Half-widths `sqrt(C_jj) · t(DOF, (1+β)/2)`.
pub fn parameter_ci(covariance: &DMatrix<f64>, dof: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("confidence level {beta} outside (0, 1)")));
    }
    let t = t_quantile(dof, 0.5 * (1.0 + beta))?;
    Ok((0..covariance.nrows())
        .map(|j| covariance[(j, j)].max(0.0).sqrt() * t)
        .collect())
}

/// Prediction and its linearized uncertainty for one response at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionBand {
    pub y: f64,
    pub sigma: f64,
    pub half_width: f64,
}

impl PredictionBand {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.y).abs() <= self.half_width
    }
}

/// `σ_y = sqrt(diag(s C sᵀ))` for a single-experiment sensitivity `s`
/// (responses × active parameters).
pub fn prediction_sigma(s: &DMatrix<f64>, covariance: &DMatrix<f64>) -> Vec<f64> {
    (0..s.nrows())
        .map(|k| {
            let row = s.row(k);
            let v = (&row * covariance * row.transpose())[(0, 0)];
            v.max(0.0).sqrt()
        })
        .collect()
}

/// Prediction bands of every response at control point `u`.
#[allow(clippy::too_many_arguments)]
pub fn prediction_band<M: Model + ?Sized>(
    model: &M,
    u: &[f64],
    theta: &[f64],
    mask: &ParameterMask,
    covariance: &DMatrix<f64>,
    dof: f64,
    beta: f64,
) -> Result<Vec<PredictionBand>> {
    let design = DesignMatrix::new(u.len(), u.to_vec())?;
    let (y, s) = stacked_jacobian(model, &design, theta, mask)?;
    let t = t_quantile(dof, 0.5 * (1.0 + beta))?;
    Ok(y.iter()
        .zip(prediction_sigma(&s, covariance))
        .map(|(&y, sigma)| PredictionBand {
            y,
            sigma,
            half_width: sigma * t,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// projected-gradient inf-norm tolerance on Φ
    pub gtol: f64,
    /// relative step tolerance
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-8,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Full parameter vector; fixed entries keep their starting values.
    pub theta: Vec<f64>,
    pub mask: ParameterMask,
    pub phi: f64,
    /// Covariance of the active parameters. `None` when the information
    /// matrix is singular.
    pub covariance: Option<DMatrix<f64>>,
    pub s_y: Vec<f64>,
    pub dof: f64,
    pub converged: bool,
    pub n_iter: usize,
    /// Unscaled sensitivity matrix at the estimate, active columns.
    pub jacobian: DMatrix<f64>,
    /// Model predictions at the estimate, stacked like the measurements.
    pub predictions: Vec<f64>,
}

impl FitResult {
    pub fn covariance(&self) -> Result<&DMatrix<f64>> {
        self.covariance.as_ref().ok_or(Error::Singular {
            condition: f64::INFINITY,
        })
    }

    pub fn active_theta(&self) -> Vec<f64> {
        self.mask.active_indices().iter().map(|&j| self.theta[j]).collect()
    }
}

const BOUND_TOL: f64 = 1e-12;

fn at_lower(x: f64, lo: f64) -> bool {
    lo.is_finite() && x - lo <= BOUND_TOL * lo.abs().max(1.0)
}

fn at_upper(x: f64, hi: f64) -> bool {
    hi.is_finite() && hi - x <= BOUND_TOL * hi.abs().max(1.0)
}

/// Bounded Levenberg–Marquardt on the active parameters.
pub fn fit_wls<M: Model + ?Sized>(
    model: &M,
    theta0: &[f64],
    bounds: &ParameterBounds,
    mask: &ParameterMask,
    data: &MeasurementSet,
    options: &FitOptions,
) -> Result<FitResult> {
    let np = model.n_params();
    if theta0.len() != np || bounds.len() != np || mask.len() != np {
        return Err(Error::Shape(format!("parameter vectors must have {np} entries")));
    }
    if !bounds.contains(theta0) {
        return Err(Error::Domain("starting point outside parameter bounds".into()));
    }
    let ny = model.n_responses();
    if data.values.len() != data.n_experiments() * ny {
        return Err(Error::Shape("measurement count does not match the model responses".into()));
    }
    let sigma = model.sigma();
    let active = mask.active_indices();
    let n = active.len();
    let ws = row_sigmas(&sigma, data.values.len());

    let mut theta = theta0.to_vec();
    let (mut y, mut s) = stacked_jacobian(model, &data.design, &theta, mask)?;
    let mut phi = weighted_ssq(&y, &data.values, &sigma);
    let mut lambda = 1e-3;
    let mut diag_floor = vec![0.0f64; n];
    let mut converged = n == 0;
    let mut n_iter = 0;

    while !converged && n_iter < options.max_iter {
        n_iter += 1;
        // Weighted Jacobian and residual.
        let mut jw = s.clone();
        let mut rw = DVector::zeros(y.len());
        for r in 0..y.len() {
            let inv = 1.0 / ws[r];
            jw.row_mut(r).scale_mut(inv);
            rw[r] = (y[r] - data.values[r]) * inv;
        }
        let jtj = jw.transpose() * &jw;
        let grad = jw.transpose() * &rw * 2.0;

        // Parameters pinned at a bound with the descent direction pointing outward.
        let mut free = vec![true; n];
        let mut pg_norm = 0.0f64;
        for (k, &j) in active.iter().enumerate() {
            let x = theta[j];
            let g = grad[k];
            let blocked = (at_lower(x, bounds.lower[j]) && g > 0.0) || (at_upper(x, bounds.upper[j]) && g < 0.0);
            free[k] = !blocked;
            if !blocked {
                pg_norm = pg_norm.max(g.abs());
            }
        }
        if pg_norm <= options.gtol {
            converged = true;
            break;
        }
        let idx: Vec<usize> = (0..n).filter(|&k| free[k]).collect();
        let m = idx.len();
        for &k in &idx {
            diag_floor[k] = diag_floor[k].max(jtj[(k, k)]);
        }
        let dmax = idx.iter().map(|&k| diag_floor[k]).fold(0.0, f64::max);

        let mut accepted = false;
        while !accepted {
            let mut a = DMatrix::from_fn(m, m, |p, q| jtj[(idx[p], idx[q])]);
            for p in 0..m {
                let d = diag_floor[idx[p]].max(1e-20 * dmax).max(f64::MIN_POSITIVE);
                a[(p, p)] += lambda * d;
            }
            let rhs = DVector::from_fn(m, |p, _| -0.5 * grad[idx[p]]);
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        return Err(Error::Singular { condition: f64::INFINITY });
                    }
                    continue;
                }
            };
            let mut trial = theta.clone();
            let mut rel_step = 0.0f64;
            for (p, &k) in idx.iter().enumerate() {
                let j = active[k];
                let x_new = bounds.clamp(j, theta[j] + step[p]);
                rel_step = rel_step.max((x_new - theta[j]).abs() / (theta[j].abs() + 1e-6));
                trial[j] = x_new;
            }
            if rel_step <= options.xtol {
                converged = true;
                break;
            }
            let ok = stacked_response(model, &data.design, &trial)
                .map(|yt| (weighted_ssq(&yt, &data.values, &sigma), yt))
                .ok()
                .filter(|(p, _)| p.is_finite());
            match ok {
                Some((phi_t, _)) if phi_t < phi => {
                    match stacked_jacobian(model, &data.design, &trial, mask) {
                        Ok((yn, sn)) => {
                            theta = trial;
                            y = yn;
                            s = sn;
                            phi = phi_t;
                            lambda = (lambda / 3.0).max(1e-12);
                            accepted = true;
                        }
                        Err(_) => lambda *= 4.0,
                    }
                }
                _ => lambda *= 4.0,
            }
            if !accepted {
                n_iter += 1;
                if n_iter >= options.max_iter {
                    break;
                }
            }
        }
    }

    let residuals: Vec<f64> = y.iter().zip(&data.values).map(|(a, b)| b - a).collect();
    let dof = dof(data.n_experiments(), n, ny)?;
    let s_y = estimate_measurement_error(&residuals, ny, dof)?;
    let covariance = bounded_covariance(&s, &sigma, &theta, &active, bounds);
    Ok(FitResult {
        theta,
        mask: mask.clone(),
        phi,
        covariance,
        s_y,
        dof,
        converged,
        n_iter,
        jacobian: s,
        predictions: y,
    })
}

/// Covariance with rows and columns of bound-active parameters set to zero.
fn bounded_covariance(
    s: &DMatrix<f64>,
    sigma: &[f64],
    theta: &[f64],
    active: &[usize],
    bounds: &ParameterBounds,
) -> Option<DMatrix<f64>> {
    let n = active.len();
    let interior: Vec<usize> = (0..n)
        .filter(|&k| {
            let j = active[k];
            !(at_lower(theta[j], bounds.lower[j]) || at_upper(theta[j], bounds.upper[j]))
        })
        .collect();
    let sub = s.select_columns(&interior);
    let c_sub = covariance_matrix(&sub, sigma).ok()?;
    let mut c = DMatrix::zeros(n, n);
    for (p, &a) in interior.iter().enumerate() {
        for (q, &b) in interior.iter().enumerate() {
            c[(a, b)] = c_sub[(p, q)];
        }
    }
    Some(c)
}
