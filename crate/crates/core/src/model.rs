//! Generic response-model interface and the containers shared by estimation,
//! design and the Monte Carlo harnesses.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A steady-state model `y = h(u, θ)` with a fixed set of measured responses
/// and their noise standard deviations.
pub trait Model: Send + Sync {
    fn n_params(&self) -> usize;
    fn n_controls(&self) -> usize;
    fn n_responses(&self) -> usize;

    fn param_names(&self) -> Vec<String>;
    fn response_names(&self) -> Vec<String>;

    /// Noise standard deviation per response, in response order.
    fn sigma(&self) -> Vec<f64>;

    /// Box bounds of each control variable.
    fn control_bounds(&self) -> Vec<(f64, f64)>;

    /// Writes `y(u, θ)` into `y`.
    fn evaluate(&self, u: &[f64], theta: &[f64], y: &mut [f64]) -> Result<()>;

    /// Writes `y(u, θ)` and the row-major `n_responses × n_params` Jacobian.
    fn evaluate_with_jacobian(&self, u: &[f64], theta: &[f64], y: &mut [f64], jac: &mut [f64]) -> Result<()>;
}

impl<M: Model + ?Sized> Model for &M {
    fn n_params(&self) -> usize {
        (**self).n_params()
    }
    fn n_controls(&self) -> usize {
        (**self).n_controls()
    }
    fn n_responses(&self) -> usize {
        (**self).n_responses()
    }
    fn param_names(&self) -> Vec<String> {
        (**self).param_names()
    }
    fn response_names(&self) -> Vec<String> {
        (**self).response_names()
    }
    fn sigma(&self) -> Vec<f64> {
        (**self).sigma()
    }
    fn control_bounds(&self) -> Vec<(f64, f64)> {
        (**self).control_bounds()
    }
    fn evaluate(&self, u: &[f64], theta: &[f64], y: &mut [f64]) -> Result<()> {
        (**self).evaluate(u, theta, y)
    }
    fn evaluate_with_jacobian(&self, u: &[f64], theta: &[f64], y: &mut [f64], jac: &mut [f64]) -> Result<()> {
        (**self).evaluate_with_jacobian(u, theta, y, jac)
    }
}

/// Ordered experiments, one row of control values each.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_controls: usize,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(n_controls: usize, values: Vec<f64>) -> Result<Self> {
        if n_controls == 0 || values.len() % n_controls != 0 {
            return Err(Error::Shape(format!(
                "{} design values do not fill rows of {n_controls} controls",
                values.len()
            )));
        }
        Ok(Self { n_controls, values })
    }

    pub fn empty(n_controls: usize) -> Self {
        Self {
            n_controls,
            values: Vec::new(),
        }
    }

    pub fn from_rows<const C: usize>(rows: &[[f64; C]]) -> Self {
        Self {
            n_controls: C,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_controls
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_controls..(i + 1) * self.n_controls]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_controls)
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_controls, "design row width");
        self.values.extend_from_slice(row);
    }

    pub fn extend(&mut self, other: &DesignMatrix) {
        assert_eq!(other.n_controls, self.n_controls, "design row width");
        self.values.extend_from_slice(&other.values);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Checks every row against the given per-control bounds.
    pub fn check_bounds(&self, bounds: &[(f64, f64)]) -> Result<()> {
        for row in self.rows() {
            for (&v, &(lo, hi)) in row.iter().zip(bounds) {
                if !(v >= lo && v <= hi) {
                    return Err(Error::Range {
                        what: "control",
                        value: v,
                        min: lo,
                        max: hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Which parameters are estimated (`true`) and which are held fixed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParameterMask(Vec<bool>);

impl ParameterMask {
    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    /// All parameters active except those listed.
    pub fn without(n: usize, fixed: &[usize]) -> Self {
        let mut m = Self::all(n);
        for &j in fixed {
            m.0[j] = false;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn n_active(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&j| self.0[j]).collect()
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    /// Deactivates the parameters at the given positions of the active list.
    pub fn restrict_to(&self, active_positions: &[usize]) -> Self {
        let active = self.active_indices();
        let mut flags = vec![false; self.0.len()];
        for &k in active_positions {
            flags[active[k]] = true;
        }
        Self(flags)
    }
}

/// Box bounds on the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("bound vectors differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Domain("lower bound above upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&t, (&l, &u))| t >= l && t <= u)
    }

    pub fn clamp(&self, j: usize, v: f64) -> f64 {
        v.max(self.lower[j]).min(self.upper[j])
    }
}

/// Predictions and sensitivities of all experiments of a design, stacked
/// experiment-major, response-minor. Columns follow the active parameters.
pub fn stacked_jacobian<M: Model + ?Sized>(
    model: &M,
    design: &DesignMatrix,
    theta: &[f64],
    mask: &ParameterMask,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let ny = model.n_responses();
    let np = model.n_params();
    let active = mask.active_indices();
    let n_rows = design.len() * ny;
    let mut y = vec![0.0; n_rows];
    let mut s = DMatrix::zeros(n_rows, active.len());
    let mut jac = vec![0.0; ny * np];
    for (i, u) in design.rows().enumerate() {
        model
            .evaluate_with_jacobian(u, theta, &mut y[i * ny..(i + 1) * ny], &mut jac)
            .map_err(|e| e.at_experiment(i))?;
        for k in 0..ny {
            let r = i * ny + k;
            for (c, &j) in active.iter().enumerate() {
                let v = jac[k * np + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: r, col: c });
                }
                s[(r, c)] = v;
            }
        }
    }
    Ok((y, s))
}

/// `n` evenly spaced values from `a` to `b` with both ends exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Predictions of all experiments of a design, stacked as in [`stacked_jacobian`].
pub fn stacked_response<M: Model + ?Sized>(model: &M, design: &DesignMatrix, theta: &[f64]) -> Result<Vec<f64>> {
    let ny = model.n_responses();
    let mut y = vec![0.0; design.len() * ny];
    for (i, u) in design.rows().enumerate() {
        model
            .evaluate(u, theta, &mut y[i * ny..(i + 1) * ny])
            .map_err(|e| e.at_experiment(i))?;
    }
    Ok(y)
}

/// `y = θ1 + θ2·u` on `u ∈ [0, 1]` with a single noisy response. Used to check
/// estimator and coverage calibration where linearization is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSurrogate {
    pub sigma: f64,
}

impl Model for LinearSurrogate {
    fn n_params(&self) -> usize {
        2
    }
    fn n_controls(&self) -> usize {
        1
    }
    fn n_responses(&self) -> usize {
        1
    }
    fn param_names(&self) -> Vec<String> {
        vec!["intercept".into(), "slope".into()]
    }
    fn response_names(&self) -> Vec<String> {
        vec!["y".into()]
    }
    fn sigma(&self) -> Vec<f64> {
        vec![self.sigma]
    }
    fn control_bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }
    fn evaluate(&self, u: &[f64], theta: &[f64], y: &mut [f64]) -> Result<()> {
        y[0] = theta[0] + theta[1] * u[0];
        Ok(())
    }
    fn evaluate_with_jacobian(&self, u: &[f64], theta: &[f64], y: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.evaluate(u, theta, y)?;
        jac[0] = 1.0;
        jac[1] = u[0];
        Ok(())
    }
}
