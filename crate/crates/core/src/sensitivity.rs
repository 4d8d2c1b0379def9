//! Bubble-point responses and their parameter sensitivities.
//!
//! Derivatives of the bubble-point temperature and vapor fraction follow from
//! the implicit function theorem applied to the bubble-point residual, with
//! the partial derivatives of the residual taken by forward-mode duals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::model::{stacked_jacobian, DesignMatrix, Model, ParameterMask};
use crate::thermo::{bubble_point_with, bubble_residual, Mixture, NrtlParams, N_NRTL, NRTL_NAMES};

/// Rows are experiment-major, response-minor; columns are active parameters.
pub type SensitivityMatrix = DMatrix<f64>;

/// Liquid-fraction and pressure bounds of a single experiment.
pub const X1L_BOUNDS: (f64, f64) = (0.01, 0.99);
/// Pa
pub const P_BOUNDS: (f64, f64) = (0.5e5, 1.5e5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseVariable {
    #[serde(rename = "x1V")]
    VaporFraction,
    #[serde(rename = "T")]
    Temperature,
}

impl ResponseVariable {
    pub fn name(self) -> &'static str {
        match self {
            ResponseVariable::VaporFraction => "x1V",
            ResponseVariable::Temperature => "T",
        }
    }

    pub fn unit_suffix(self) -> &'static str {
        match self {
            ResponseVariable::VaporFraction => "molmol",
            ResponseVariable::Temperature => "K",
        }
    }
}

/// Measured variables and their noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSpec {
    variables: Vec<ResponseVariable>,
    /// mole fraction
    sigma_x1v: f64,
    /// K
    sigma_t: f64,
}

impl ResponseSpec {
    pub fn new(variables: Vec<ResponseVariable>, sigma_x1v: f64, sigma_t: f64) -> Result<Self> {
        let spec = Self {
            variables,
            sigma_x1v,
            sigma_t,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Domain("at least one response variable must be measured".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if self.variables[..i].contains(v) {
                return Err(Error::Domain(format!("response {} listed twice", v.name())));
            }
            let s = self.sigma_of(*v);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("sigma for {} must be positive", v.name())));
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> &[ResponseVariable] {
        &self.variables
    }

    pub fn sigma_of(&self, v: ResponseVariable) -> f64 {
        match v {
            ResponseVariable::VaporFraction => self.sigma_x1v,
            ResponseVariable::Temperature => self.sigma_t,
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.variables.iter().map(|&v| self.sigma_of(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn position(&self, v: ResponseVariable) -> Option<usize> {
        self.variables.iter().position(|&w| w == v)
    }
}

/// Selected bubble-point outputs at `u = (x1L, P)`, in spec order.
pub fn response_eval(u: [f64; 2], theta: &NrtlParams, spec: &ResponseSpec, m: &Mixture) -> Result<Vec<f64>> {
    let s = bubble_point_with(u[0], u[1], theta, m)?;
    Ok(spec
        .variables()
        .iter()
        .map(|v| match v {
            ResponseVariable::VaporFraction => s.x1v,
            ResponseVariable::Temperature => s.t,
        })
        .collect())
}

/// The bubble-point problem of one mixture seen as a [`Model`] with
/// parameter vector `[A12, B12, A21, B21, α]` and controls `(x1L, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VleModel {
    pub mixture: Mixture,
    pub spec: ResponseSpec,
    /// When false, controls outside the experimental box are accepted.
    pub enforce_bounds: bool,
}

impl VleModel {
    pub fn new(mixture: Mixture, spec: ResponseSpec) -> Self {
        Self {
            mixture,
            spec,
            enforce_bounds: true,
        }
    }

    fn check_controls(&self, u: &[f64]) -> Result<()> {
        if u.len() != 2 {
            return Err(Error::Shape(format!("expected 2 controls, got {}", u.len())));
        }
        if self.enforce_bounds {
            for (&v, (lo, hi), what) in [
                (&u[0], X1L_BOUNDS, "x1L"),
                (&u[1], P_BOUNDS, "P"),
            ] {
                if !(v >= lo && v <= hi) {
                    return Err(Error::Range {
                        what,
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

impl Model for VleModel {
    fn n_params(&self) -> usize {
        N_NRTL
    }
    fn n_controls(&self) -> usize {
        2
    }
    fn n_responses(&self) -> usize {
        self.spec.len()
    }
    fn param_names(&self) -> Vec<String> {
        NRTL_NAMES.iter().map(|s| s.to_string()).collect()
    }
    fn response_names(&self) -> Vec<String> {
        self.spec.variables().iter().map(|v| v.name().to_string()).collect()
    }
    fn sigma(&self) -> Vec<f64> {
        self.spec.sigmas()
    }
    fn control_bounds(&self) -> Vec<(f64, f64)> {
        vec![X1L_BOUNDS, P_BOUNDS]
    }

    fn evaluate(&self, u: &[f64], theta: &[f64], y: &mut [f64]) -> Result<()> {
        self.check_controls(u)?;
        let p = NrtlParams::from_slice(theta)?;
        let s = bubble_point_with(u[0], u[1], &p, &self.mixture)?;
        for (out, v) in y.iter_mut().zip(self.spec.variables()) {
            *out = match v {
                ResponseVariable::VaporFraction => s.x1v,
                ResponseVariable::Temperature => s.t,
            };
        }
        Ok(())
    }

    fn evaluate_with_jacobian(&self, u: &[f64], theta: &[f64], y: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.check_controls(u)?;
        let p = NrtlParams::from_slice(theta)?;
        let s = bubble_point_with(u[0], u[1], &p, &self.mixture)?;
        let grads = bubble_gradients(u[0], u[1], s.t, &p, &self.mixture)?;
        for (k, v) in self.spec.variables().iter().enumerate() {
            let (val, g) = match v {
                ResponseVariable::VaporFraction => (s.x1v, grads.x1v),
                ResponseVariable::Temperature => (s.t, grads.t),
            };
            y[k] = val;
            jac[k * N_NRTL..(k + 1) * N_NRTL].copy_from_slice(&g);
        }
        Ok(())
    }
}

/// Total derivatives of the bubble-point temperature and vapor fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleGradients {
    pub t: [f64; N_NRTL],
    pub x1v: [f64; N_NRTL],
}

/// Derivatives at a converged bubble point `t`.
pub fn bubble_gradients(x1l: f64, p: f64, t: f64, theta: &NrtlParams, m: &Mixture) -> Result<BubbleGradients> {
    const T_SEED: usize = N_NRTL;
    let raw = theta.to_array();
    let th: [Dual<6>; N_NRTL] = std::array::from_fn(|j| Dual::variable(raw[j], j));
    let (f, g) = bubble_residual(x1l, p, Dual::<6>::variable(t, T_SEED), &th, m);
    let f_t = f.eps[T_SEED];
    if !(f_t.is_finite() && f_t != 0.0) {
        return Err(Error::Domain(format!(
            "bubble-point residual has zero temperature slope at x1L = {x1l}, P = {p}"
        )));
    }
    let mut out = BubbleGradients {
        t: [0.0; N_NRTL],
        x1v: [0.0; N_NRTL],
    };
    for j in 0..N_NRTL {
        let dt = -f.eps[j] / f_t;
        out.t[j] = dt;
        out.x1v[j] = g.eps[j] + g.eps[T_SEED] * dt;
    }
    Ok(out)
}

/// Sensitivity matrix of the selected responses over a design.
pub fn sensitivity_matrix(
    design: &DesignMatrix,
    theta: &NrtlParams,
    mask: &ParameterMask,
    spec: &ResponseSpec,
    m: &Mixture,
) -> Result<SensitivityMatrix> {
    let model = VleModel::new(m.clone(), spec.clone());
    Ok(stacked_jacobian(&model, design, &theta.to_array(), mask)?.1)
}

/// Row normalization applied by [`scale_sensitivity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling<'a> {
    /// Divide each row by the noise level of its response; one entry per
    /// response variable, repeated over experiments.
    Noise(&'a [f64]),
    /// Divide each row by its predicted response value; one entry per row.
    Yao(&'a [f64]),
}

/// `S·diag(θ)` with each row divided as selected by `scaling`.
/// `theta_active` holds the parameter values of the matrix columns.
pub fn scale_sensitivity(s: &SensitivityMatrix, theta_active: &[f64], scaling: Scaling<'_>) -> Result<SensitivityMatrix> {
    if theta_active.len() != s.ncols() {
        return Err(Error::Shape(format!(
            "{} parameter values for {} sensitivity columns",
            theta_active.len(),
            s.ncols()
        )));
    }
    let divisor: Box<dyn Fn(usize) -> f64 + '_> = match scaling {
        Scaling::Noise(sigma) => {
            if sigma.is_empty() || s.nrows() % sigma.len() != 0 {
                return Err(Error::Shape("noise vector does not tile sensitivity rows".into()));
            }
            Box::new(move |r| sigma[r % sigma.len()])
        }
        Scaling::Yao(y) => {
            if y.len() != s.nrows() {
                return Err(Error::Shape("prediction vector length differs from row count".into()));
            }
            Box::new(move |r| y[r])
        }
    };
    let mut out = s.clone();
    for r in 0..s.nrows() {
        let d = divisor(r);
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Domain(format!("zero or non-finite scaling divisor at row {r}")));
        }
        for (c, &th) in theta_active.iter().enumerate() {
            out[(r, c)] = s[(r, c)] * th / d;
        }
    }
    Ok(out)
}
